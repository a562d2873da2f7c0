//! Command-line front end: `train`, `eval`, `ablate` and `gradcheck`.

mod gradcheck;

pub use gradcheck::{gradcheck_report, GradcheckLine, GRADCHECK_TOLERANCE};

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::autodiff::ParamVector;
use crate::contrastive::{ContrastiveConfig, DistanceKind, LossForm};
use crate::eval::{
    ablation_grid, cluster_models, distance_distributions, eval_errors, ood_sweep, shot_sweep, write_cluster_report,
    write_distance_report, write_sweep_report, AblationAxes, EvalConfig,
};
use crate::learners::{build_learner, LearnerConfig};
use crate::tasks::TaskDistributionConfig;
use crate::training::{content_hash, EpisodeConfig, RunManifest, TrainSpec, Trainer, CHECKPOINT_FILE, MANIFEST_FILE};

/// Default output root when neither `--out` nor the config names one.
pub const RUNS_DIR_ENV: &str = "CONML_RUNS_DIR";
pub const CONFIG_FILE: &str = "config.json";
pub const REPORTS_DIR: &str = "reports";

/// The JSON experiment file. Unknown keys anywhere are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub learner: LearnerConfig,
    pub tasks: TaskDistributionConfig,
    /// Absent for the plain episodic baseline.
    #[serde(default)]
    pub contrastive: Option<ContrastiveConfig>,
    #[serde(default)]
    pub training: EpisodeConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub seed: u64,
    /// Output root; runs land in `<output>/<hash>/`.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn train_spec(&self) -> TrainSpec {
        TrainSpec {
            learner: self.learner.clone(),
            tasks: self.tasks.clone(),
            contrastive: self.contrastive.clone(),
            episode: self.training.clone(),
            seed: self.seed,
        }
    }

    /// Strict parse with the failing field path in the message.
    pub fn from_json(text: &str) -> Result<Self, String> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            format!("at `{path}`: {}", e.into_inner())
        })?;
        cfg.train_spec().validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        Self::from_json(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
    }

    /// `<root>/<hash of the training spec>`.
    pub fn run_dir(&self, out: Option<&Path>) -> Result<PathBuf, String> {
        let hash = content_hash(&self.train_spec()).map_err(|e| e.to_string())?;
        Ok(output_root(out, self.output.as_deref()).join(hash))
    }
}

/// `--out`, then the config's `output`, then `$CONML_RUNS_DIR`, then `runs`.
pub fn output_root(flag: Option<&Path>, config: Option<&Path>) -> PathBuf {
    flag.or(config)
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(RUNS_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

#[derive(Parser, Debug)]
#[command(name = "conml", version, about = "Contrastive meta-learning experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Protocol {
    Mse,
    Cluster,
    Distances,
    Ood,
    Shots,
    All,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Meta-train and write manifest, checkpoint and loss trace.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Evaluate a trained run; reports go to `<run>/reports/`.
    Eval {
        /// Run directory. Defaults to the one `--config` trains into.
        run: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "mse")]
        protocol: Vec<Protocol>,
        #[arg(long, value_delimiter = ',')]
        deltas: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        shots: Option<Vec<usize>>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Train a grid of contrastive settings and tabulate test error.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Seeds shared by every cell; defaults to the config seed.
        #[arg(long, value_delimiter = ',')]
        seed: Option<Vec<u64>>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "lambda", value_delimiter = ',')]
        lambda: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
        #[arg(long = "loss-form", value_delimiter = ',')]
        loss_form: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        distance: Option<Vec<String>>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Finite-difference audit of all gradients.
    Gradcheck {
        /// Perturb analytic gradients; the audit must then fail.
        #[arg(long, hide = true)]
        corrupt: bool,
    },
}

/// Parses `std::env::args`, runs the command and returns the exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run(command: Command) -> Result<(), String> {
    match command {
        Command::Train { config, seed, out, jobs } => {
            let dir = cmd_train(&config, seed, out.as_deref(), jobs)?;
            println!("{}", dir.display());
            Ok(())
        }
        Command::Eval { run, config, seed, out, protocol, deltas, shots, jobs } => {
            let dir = match (run, config) {
                (Some(dir), _) => dir,
                (None, Some(path)) => {
                    let mut cfg = ExperimentConfig::load(&path)?;
                    if let Some(s) = seed {
                        cfg.seed = s;
                    }
                    cfg.run_dir(out.as_deref())?
                }
                (None, None) => return Err("eval needs a run directory or --config".into()),
            };
            let written = cmd_eval(&dir, &protocol, deltas, shots, seed, jobs)?;
            for p in written {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Ablate { config, seed, out, lambda, k, loss_form, distance, jobs } => {
            let axes = AblationAxes {
                lambda: lambda.unwrap_or_default(),
                k: k.unwrap_or_default(),
                loss_form: parse_names(loss_form)?,
                distance: parse_names(distance)?,
            };
            let dir = cmd_ablate(&config, &axes, seed, out.as_deref(), jobs)?;
            print!("{}", fs::read_to_string(dir.join("ablation.md")).map_err(|e| e.to_string())?);
            Ok(())
        }
        Command::Gradcheck { corrupt } => {
            let lines = gradcheck_report(corrupt)?;
            let mut ok = true;
            for l in &lines {
                let verdict = if l.passed() { "ok" } else { "FAIL" };
                ok &= l.passed();
                println!("{verdict:4} {:.3e}  {:5} params  {}", l.max_rel_error, l.parameters, l.component);
            }
            if ok {
                Ok(())
            } else {
                Err(format!("gradient check failed (tolerance {GRADCHECK_TOLERANCE:e})"))
            }
        }
    }
}

fn parse_names<T: serde::de::DeserializeOwned>(names: Option<Vec<String>>) -> Result<Vec<T>, String> {
    names
        .unwrap_or_default()
        .into_iter()
        .map(|n| serde_json::from_value(serde_json::Value::String(n.clone())).map_err(|_| format!("unknown value `{n}`")))
        .collect()
}

/// Trains `config` into `<root>/<hash>/` and returns that directory.
pub fn cmd_train(config: &Path, seed: Option<u64>, out: Option<&Path>, jobs: usize) -> Result<PathBuf, String> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let dir = cfg.run_dir(out)?;
    fs::create_dir_all(&dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    let text = serde_json::to_string_pretty(&cfg).map_err(|e| e.to_string())?;
    fs::write(dir.join(CONFIG_FILE), text).map_err(|e| e.to_string())?;
    let mut trainer = Trainer::new(cfg.train_spec()).map_err(|e| e.to_string())?.with_jobs(jobs);
    trainer.run(Some(&dir)).map_err(|e| e.to_string())?;
    Ok(dir)
}

/// Runs the requested protocols and returns every file written.
pub fn cmd_eval(
    dir: &Path,
    protocols: &[Protocol],
    deltas: Option<Vec<f64>>,
    shots: Option<Vec<usize>>,
    seed: Option<u64>,
    jobs: usize,
) -> Result<Vec<PathBuf>, String> {
    let ckpt = dir.join(CHECKPOINT_FILE);
    if !ckpt.is_file() {
        return Err(format!("no checkpoint at {}", ckpt.display()));
    }
    let manifest = RunManifest::load(&dir.join(MANIFEST_FILE)).map_err(|e| e.to_string())?;
    let spec = manifest.spec;
    let mut eval = match fs::read_to_string(dir.join(CONFIG_FILE)) {
        Ok(text) => ExperimentConfig::from_json(&text)?.eval,
        Err(_) => EvalConfig::default(),
    };
    if let Some(d) = deltas {
        eval.deltas = d;
    }
    if let Some(s) = shots {
        eval.shots = s;
    }
    if eval.deltas.is_empty() || eval.shots.is_empty() {
        return Err("--deltas and --shots need at least one value".into());
    }
    let seed = seed.unwrap_or(spec.seed);
    let theta = ParamVector::load(&ckpt).map_err(|e| e.to_string())?;
    let learner = build_learner(&spec.learner, &spec.tasks).map_err(|e| e.to_string())?;
    let l = learner.as_ref();
    let reports = dir.join(REPORTS_DIR);
    let all = protocols.contains(&Protocol::All);
    let wants = |p: Protocol| all || protocols.contains(&p);
    let distance = spec.contrastive.as_ref().map(|c| c.distance).unwrap_or_default();
    let series = |name: &str| if spec.contrastive.is_some() { format!("{name} w/ contrastive") } else { name.to_string() };
    let learner_name = serde_json::to_value(spec.learner.kind()).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
    let err = |e: crate::eval::EvalError| e.to_string();

    let mut written = Vec::new();
    let mut finite = true;
    if wants(Protocol::Mse) {
        let (loss, acc) = eval_errors(l, &theta, &spec.tasks, spec.tasks.shots, &eval, seed, jobs).map_err(err)?;
        finite &= loss.mean.is_finite();
        let mut csv = format!("metric,shots,mean,std,tasks\n{},{},{},{},{}\n", loss.metric, spec.tasks.shots, loss.mean, loss.std, loss.count);
        if let Some(a) = &acc {
            csv.push_str(&format!("{},{},{},{},{}\n", a.metric, spec.tasks.shots, a.mean, a.std, a.count));
        }
        fs::create_dir_all(&reports).map_err(|e| e.to_string())?;
        let path = reports.join("mse.csv");
        fs::write(&path, csv).map_err(|e| e.to_string())?;
        let json = serde_json::json!({"loss": loss, "accuracy": acc});
        let jpath = reports.join("mse.json");
        fs::write(&jpath, serde_json::to_string_pretty(&json).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        written.extend([path, jpath]);
    }
    if wants(Protocol::Cluster) {
        let normalize = distance == DistanceKind::Cosine;
        let c = cluster_models(l, &theta, &spec.tasks, &eval.cluster, normalize, seed, jobs).map_err(err)?;
        finite &= c.scores.silhouette.is_finite() && c.scores.dbi.is_finite() && c.scores.chi.is_finite();
        written.extend(write_cluster_report(&reports, "cluster", &c).map_err(err)?);
    }
    if wants(Protocol::Distances) {
        let d = distance_distributions(l, &theta, &spec.tasks, &eval.distances, distance, seed, jobs).map_err(err)?;
        finite &= d.mean_in.is_finite() && d.mean_out.is_finite();
        written.extend(write_distance_report(&reports, "distances", &[(series(&learner_name), &d)]).map_err(err)?);
    }
    if wants(Protocol::Ood) {
        let sweep = ood_sweep(l, &theta, &spec.tasks, &eval.deltas, spec.tasks.shots, &eval, seed, jobs).map_err(err)?;
        finite &= sweep.iter().all(|(_, r)| r.mean.is_finite());
        written.extend(write_sweep_report(&reports, "ood", "delta", &[(series(&learner_name), sweep)]).map_err(err)?);
    }
    if wants(Protocol::Shots) {
        let sweep = shot_sweep(l, &theta, &spec.tasks, &eval.shots, &eval, seed, jobs).map_err(err)?;
        finite &= sweep.iter().all(|(_, r)| r.mean.is_finite());
        written.extend(write_sweep_report(&reports, "shots", "shots", &[(series(&learner_name), sweep)]).map_err(err)?);
    }
    if !finite {
        return Err("evaluation produced non-finite metrics".into());
    }
    Ok(written)
}

/// Writes `ablation.{csv,md,json}` under `<root>/ablations/<hash>/`.
pub fn cmd_ablate(config: &Path, axes: &AblationAxes, seeds: Option<Vec<u64>>, out: Option<&Path>, jobs: usize) -> Result<PathBuf, String> {
    let cfg = ExperimentConfig::load(config)?;
    let seeds = seeds.unwrap_or_else(|| vec![cfg.seed]);
    let mut base = cfg.train_spec();
    if base.contrastive.is_none() {
        base.contrastive = Some(ContrastiveConfig::default());
    }
    let table = ablation_grid(&base, axes, &seeds, &cfg.eval, jobs).map_err(|e| e.to_string())?;
    let hash = content_hash(&(&base, axes, &seeds, &cfg.eval)).map_err(|e| e.to_string())?;
    let dir = output_root(out, cfg.output.as_deref()).join("ablations").join(hash);
    fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let write = |name: &str, body: String| fs::write(dir.join(name), body).map_err(|e| e.to_string());
    write("ablation.csv", table.to_csv())?;
    write("ablation.md", table.to_markdown())?;
    write("ablation.json", serde_json::to_string_pretty(&table).map_err(|e| e.to_string())?)?;
    if table.rows.iter().any(|r| r.mse.count > 0 && !r.mse.mean.is_finite()) {
        return Err("ablation produced non-finite metrics".into());
    }
    Ok(dir)
}

/// Accepts the names used in config files, e.g. `infonce` or `sigmoid_euclidean`.
pub fn parse_loss_form(name: &str) -> Result<LossForm, String> {
    parse_names(Some(vec![name.to_string()])).map(|mut v| v.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "learner": {"kind": "maml", "hidden": [8]},
        "tasks": {"family": {"kind": "sinusoid"}, "shots": 5, "val_size": 5},
        "training": {"batch_size": 2, "episodes": 2},
        "eval": {"tasks": 4, "test_points": 5, "cluster": {"tasks": 2, "subsets": 2, "subset_size": 3},
                 "distances": {"tasks": 3, "subsets": 2, "subset_size": 3}},
        "seed": 3
    }"#;

    #[test]
    fn strict_parse_reports_field_path() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert!(cfg.contrastive.is_none());
        let typo = MINIMAL.replace("\"hidden\"", "\"hiden\"");
        let e = ExperimentConfig::from_json(&typo).unwrap_err();
        assert!(e.contains("learner") && e.contains("hiden"), "{e}");
        let nested = MINIMAL.replace("\"batch_size\": 2", "\"batch_size\": 2, \"lr\": 1");
        let e = ExperimentConfig::from_json(&nested).unwrap_err();
        assert!(e.contains("training") && e.contains("lr"), "{e}");
        let bad = MINIMAL.replace("\"shots\": 5", "\"shots\": -1");
        assert!(ExperimentConfig::from_json(&bad).unwrap_err().contains("tasks.shots"));
    }

    #[test]
    fn run_dir_tracks_semantic_fields_only() {
        let a = ExperimentConfig::from_json(MINIMAL).unwrap();
        let root = Path::new("/tmp/x");
        let mut b = a.clone();
        b.output = Some("/elsewhere".into());
        b.eval.tasks = 99;
        assert_eq!(a.run_dir(Some(root)).unwrap(), b.run_dir(Some(root)).unwrap());
        b.seed += 1;
        assert_ne!(a.run_dir(Some(root)).unwrap(), b.run_dir(Some(root)).unwrap());
    }

    #[test]
    fn output_root_precedence() {
        assert_eq!(output_root(Some(Path::new("a")), Some(Path::new("b"))), PathBuf::from("a"));
        assert_eq!(output_root(None, Some(Path::new("b"))), PathBuf::from("b"));
    }

    #[test]
    fn names_parse_like_config_values() {
        assert_eq!(parse_loss_form("infonce").unwrap(), LossForm::Infonce);
        assert!(parse_loss_form("nce").is_err());
        let d: Vec<DistanceKind> = parse_names(Some(vec!["sigmoid_euclidean".into()])).unwrap();
        assert_eq!(d, vec![DistanceKind::SigmoidEuclidean]);
    }

    #[test]
    fn eval_without_checkpoint_fails() {
        let dir = tempfile::tempdir().unwrap();
        let e = cmd_eval(dir.path(), &[Protocol::Mse], None, None, None, 1).unwrap_err();
        assert!(e.contains("no checkpoint"));
    }
}
