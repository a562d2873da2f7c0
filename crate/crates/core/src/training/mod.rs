//! Episodic meta-training, with or without the contrastive term.

mod episode;
mod optim;

pub use episode::{run_episode_baseline, run_episode_conml, EpisodeOutput};
pub(crate) use episode::par_map;
pub use optim::{Optimizer, OptimizerConfig};

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::{AutodiffError, ParamVector};
use crate::contrastive::{ContrastError, ContrastiveConfig};
use crate::learners::{build_learner, LearnError, LearnerConfig, MetaLearner};
use crate::rng::{stream, Purpose};
use crate::tasks::{sample_batch, sample_subsets, Dataset, TaskDistributionConfig, TaskError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training collapsed at episode {episode}: {what} is not finite")]
    Collapse { episode: usize, what: &'static str },
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Contrast(#[from] ContrastError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeConfig {
    /// Tasks per episode, `B`.
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Write an intermediate checkpoint every this many episodes; 0 disables.
    #[serde(default)]
    pub checkpoint_every: usize,
}

fn default_batch_size() -> usize {
    25
}

fn default_episodes() -> usize {
    10_000
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            batch_size: default_batch_size(),
            episodes: default_episodes(),
            optimizer: OptimizerConfig::default(),
            checkpoint_every: 0,
        }
    }
}

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub learner: LearnerConfig,
    pub tasks: TaskDistributionConfig,
    /// `None` trains the plain episodic objective.
    #[serde(default)]
    pub contrastive: Option<ContrastiveConfig>,
    #[serde(default)]
    pub episode: EpisodeConfig,
    pub seed: u64,
}

impl TrainSpec {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.tasks.validate()?;
        let e = &self.episode;
        if e.batch_size == 0 || e.episodes == 0 {
            return Err(TrainError::Config("batch_size and episodes must be at least 1".into()));
        }
        let lr = e.optimizer.lr();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(TrainError::Config(format!("learning rate must be positive, got {lr}")));
        }
        if let Some(c) = &self.contrastive {
            c.validate()?;
            if e.batch_size < 2 {
                return Err(TrainError::Config("the contrastive objective needs batch_size >= 2".into()));
            }
        }
        Ok(())
    }
}

/// Hex SHA-256 of a value's canonical JSON (object keys sorted).
pub fn content_hash<T: Serialize>(value: &T) -> Result<String, serde_json::Error> {
    let canonical = serde_json::to_vec(&serde_json::to_value(value)?)?;
    Ok(hex::encode(Sha256::digest(&canonical)))
}

/// Diagnostics of one completed episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub l_v: f64,
    pub d_in: Option<f64>,
    pub d_out: Option<f64>,
    pub l_c: Option<f64>,
    pub loss: f64,
}

/// JSON summary written next to a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub spec: TrainSpec,
    pub episodes_completed: usize,
    pub parameter_count: usize,
    pub trace: Vec<EpisodeRecord>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, TrainError> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Counters that depend on the machine, kept out of every artifact.
#[derive(Clone, Debug, Default)]
pub struct TrainStats {
    pub seconds: f64,
    pub adapt_calls: usize,
    pub max_peak_bytes: usize,
}

/// Stateful episode-by-episode trainer.
pub struct Trainer {
    spec: TrainSpec,
    learner: Box<dyn MetaLearner>,
    theta: ParamVector,
    optimizer: Optimizer,
    episode: usize,
    trace: Vec<EpisodeRecord>,
    stats: TrainStats,
    jobs: usize,
}

impl Trainer {
    pub fn new(spec: TrainSpec) -> Result<Self, TrainError> {
        spec.validate()?;
        let learner = build_learner(&spec.learner, &spec.tasks)?;
        let theta = learner.init_params(&mut stream(spec.seed, Purpose::Init, 0))?;
        let optimizer = Optimizer::new(spec.episode.optimizer.clone());
        Ok(Self {
            spec,
            learner,
            theta,
            optimizer,
            episode: 0,
            trace: Vec::new(),
            stats: TrainStats::default(),
            jobs: 1,
        })
    }

    /// Threads used for per-task work. Results do not depend on it.
    pub fn with_jobs(mut self, jobs: usize) -> Self {
        self.jobs = jobs.max(1);
        self
    }

    pub fn spec(&self) -> &TrainSpec {
        &self.spec
    }

    pub fn learner(&self) -> &dyn MetaLearner {
        self.learner.as_ref()
    }

    pub fn theta(&self) -> &ParamVector {
        &self.theta
    }

    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn trace(&self) -> &[EpisodeRecord] {
        &self.trace
    }

    pub fn stats(&self) -> &TrainStats {
        &self.stats
    }

    pub fn remaining(&self) -> usize {
        self.spec.episode.episodes.saturating_sub(self.episode)
    }

    /// Runs the next episode's forward and backward pass without updating `θ`.
    pub fn evaluate_episode(&self, episode: usize) -> Result<EpisodeOutput, TrainError> {
        let spec = &self.spec;
        let batch = sample_batch(&spec.tasks, spec.episode.batch_size, &mut stream(spec.seed, Purpose::Tasks, episode as u64))?;
        match &spec.contrastive {
            None => run_episode_baseline(self.learner.as_ref(), &self.theta, &batch, self.jobs),
            Some(cfg) => {
                let mut rng = stream(spec.seed, Purpose::Subsets, episode as u64);
                let subsets = batch
                    .iter()
                    .map(|t| sample_subsets(t, &cfg.strategy, cfg.k, &mut rng))
                    .collect::<Result<Vec<Vec<Dataset>>, _>>()?;
                run_episode_conml(self.learner.as_ref(), &self.theta, &batch, &subsets, cfg, self.jobs)
            }
        }
    }

    /// One episode and one optimizer step.
    pub fn step(&mut self) -> Result<&EpisodeRecord, TrainError> {
        let episode = self.episode;
        let start = Instant::now();
        let out = self.evaluate_episode(episode)?;
        if !out.loss.is_finite() || !out.l_v.is_finite() {
            return Err(TrainError::Collapse { episode, what: "loss" });
        }
        if out.grad.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::Collapse { episode, what: "gradient" });
        }
        let mut flat = self.theta.flatten();
        self.optimizer.step(&mut flat, &out.grad);
        if flat.iter().any(|p| !p.is_finite()) {
            return Err(TrainError::Collapse { episode, what: "parameter vector" });
        }
        self.theta = self.theta.with_flat(&flat)?;
        self.stats.seconds += start.elapsed().as_secs_f64();
        self.stats.adapt_calls += out.adapt_calls;
        self.stats.max_peak_bytes = self.stats.max_peak_bytes.max(out.peak_bytes);
        self.episode += 1;
        self.trace.push(EpisodeRecord {
            episode,
            l_v: out.l_v,
            d_in: out.d_in,
            d_out: out.d_out,
            l_c: out.l_c,
            loss: out.loss,
        });
        Ok(self.trace.last().expect("just pushed"))
    }

    /// Runs all remaining episodes, writing checkpoints into `run_dir` at
    /// the configured cadence and the final artifacts at the end.
    pub fn run(&mut self, run_dir: Option<&Path>) -> Result<(), TrainError> {
        let every = self.spec.episode.checkpoint_every;
        while self.remaining() > 0 {
            self.step()?;
            if let Some(dir) = run_dir {
                if every > 0 && self.episode % every == 0 && self.remaining() > 0 {
                    self.theta.save(&dir.join(CHECKPOINT_FILE))?;
                }
            }
        }
        if let Some(dir) = run_dir {
            self.write_artifacts(dir)?;
        }
        Ok(())
    }

    pub fn manifest(&self) -> Result<RunManifest, TrainError> {
        Ok(RunManifest {
            config_hash: content_hash(&self.spec)?,
            spec: self.spec.clone(),
            episodes_completed: self.episode,
            parameter_count: self.theta.numel(),
            trace: self.trace.clone(),
        })
    }

    /// `manifest.json`, `checkpoint.bin` (+ shape sidecar) and `losses.csv`.
    pub fn write_artifacts(&self, dir: &Path) -> Result<(), TrainError> {
        std::fs::create_dir_all(dir)?;
        self.theta.save(&dir.join(CHECKPOINT_FILE))?;
        let manifest = serde_json::to_string_pretty(&self.manifest()?)?;
        std::fs::write(dir.join(MANIFEST_FILE), manifest)?;
        write_losses_csv(&dir.join(LOSSES_FILE), &self.trace)?;
        Ok(())
    }

    pub fn into_theta(self) -> ParamVector {
        self.theta
    }
}

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOSSES_FILE: &str = "losses.csv";

/// Trains to completion and returns the final `θ` and the loss trace.
pub fn meta_train(spec: &TrainSpec, run_dir: Option<&Path>, jobs: usize) -> Result<(ParamVector, Vec<EpisodeRecord>), TrainError> {
    let mut trainer = Trainer::new(spec.clone())?.with_jobs(jobs);
    trainer.run(run_dir)?;
    let trace = trainer.trace.clone();
    Ok((trainer.into_theta(), trace))
}

fn write_losses_csv(path: &PathBuf, trace: &[EpisodeRecord]) -> Result<(), TrainError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "episode,L_v,d_in,d_out,L_c,L")?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in trace {
        writeln!(f, "{},{},{},{},{},{}", r.episode, r.l_v, opt(r.d_in), opt(r.d_out), opt(r.l_c), r.loss)?;
    }
    f.flush()?;
    Ok(())
}
