use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{eval_mse, EvalConfig, EvalError, MetricReport};
use crate::contrastive::{ContrastiveConfig, DistanceKind, LossForm};
use crate::learners::build_learner;
use crate::training::{TrainSpec, Trainer};

/// Values swept by [`ablation_grid`]. An empty axis keeps the base value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationAxes {
    #[serde(default)]
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub k: Vec<usize>,
    #[serde(default)]
    pub loss_form: Vec<LossForm>,
    #[serde(default)]
    pub distance: Vec<DistanceKind>,
}

/// One grid cell aggregated over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub lambda: f64,
    pub k: usize,
    pub loss_form: LossForm,
    pub distance: DistanceKind,
    pub mse: MetricReport,
    pub ms_per_episode: MetricReport,
    pub peak_bytes: MetricReport,
    /// Runs that diverged instead of producing a metric.
    pub collapsed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub shots: usize,
    pub rows: Vec<AblationRow>,
}

fn name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "lambda,k,loss_form,distance,mse_mean,mse_std,ms_per_episode,peak_bytes,collapsed,seeds\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.lambda,
                r.k,
                name(&r.loss_form),
                name(&r.distance),
                r.mse.mean,
                r.mse.std,
                r.ms_per_episode.mean,
                r.peak_bytes.mean,
                r.collapsed,
                self.seeds.len()
            );
        }
        out
    }

    /// Axes that actually vary become columns; constant ones are listed above the table.
    pub fn to_markdown(&self) -> String {
        let vary = |f: &dyn Fn(&AblationRow) -> String| {
            let first = self.rows.first().map(f);
            self.rows.iter().any(|r| Some(f(r)) != first)
        };
        let axes: [(&str, Box<dyn Fn(&AblationRow) -> String>); 4] = [
            ("λ", Box::new(|r| format!("{}", r.lambda))),
            ("K", Box::new(|r| r.k.to_string())),
            ("loss", Box::new(|r| name(&r.loss_form))),
            ("distance", Box::new(|r| name(&r.distance))),
        ];
        let mut out = String::new();
        let _ = writeln!(out, "{}-shot test MSE over {} seed(s)\n", self.shots, self.seeds.len());
        let mut columns = Vec::new();
        for (label, f) in &axes {
            if vary(f.as_ref()) || self.rows.len() == 1 {
                columns.push((label, f));
            } else if let Some(r) = self.rows.first() {
                let _ = writeln!(out, "- {label} = {}", f(r));
            }
        }
        if columns.len() < axes.len() {
            out.push('\n');
        }
        let header: Vec<&str> = columns.iter().map(|(l, _)| **l).collect();
        let _ = writeln!(out, "| {} | MSE | ms/episode | peak MiB | collapsed |", header.join(" | "));
        let _ = writeln!(out, "|{}---|---|---|---|---|", "---|".repeat(header.len()));
        for r in &self.rows {
            let cells: Vec<String> = columns.iter().map(|(_, f)| f(r)).collect();
            let _ = writeln!(
                out,
                "| {} | {:.4} ± {:.4} | {:.2} | {:.2} | {} |",
                cells.join(" | "),
                r.mse.mean,
                r.mse.std,
                r.ms_per_episode.mean,
                r.peak_bytes.mean / (1024.0 * 1024.0),
                r.collapsed
            );
        }
        out
    }
}

/// Trains every cell of the cross product for each seed and scores it with
/// [`eval_mse`] at the base shot count. Seeds are shared across cells.
pub fn ablation_grid(
    base: &TrainSpec,
    axes: &AblationAxes,
    seeds: &[u64],
    eval: &EvalConfig,
    jobs: usize,
) -> Result<AblationTable, EvalError> {
    if seeds.is_empty() {
        return Err(EvalError::Input("ablation needs at least one seed".into()));
    }
    let c0 = base.contrastive.clone().unwrap_or_default();
    let pick = |v: &[f64], d: f64| if v.is_empty() { vec![d] } else { v.to_vec() };
    let lambdas = pick(&axes.lambda, c0.lambda);
    let ks = if axes.k.is_empty() { vec![c0.k] } else { axes.k.clone() };
    let forms = if axes.loss_form.is_empty() { vec![c0.loss_form] } else { axes.loss_form.clone() };
    let dists = if axes.distance.is_empty() { vec![c0.distance] } else { axes.distance.clone() };

    let mut rows = Vec::new();
    for &lambda in &lambdas {
        for &k in &ks {
            for &loss_form in &forms {
                for &distance in &dists {
                    let cell = ContrastiveConfig { lambda, k, loss_form, distance, ..c0.clone() };
                    cell.validate()?;
                    let (mut mse, mut ms, mut peak, mut collapsed) = (Vec::new(), Vec::new(), Vec::new(), 0);
                    for &seed in seeds {
                        let spec = TrainSpec { contrastive: Some(cell.clone()), seed, ..base.clone() };
                        let mut trainer = Trainer::new(spec.clone())?.with_jobs(jobs);
                        match trainer.run(None) {
                            Ok(()) => {}
                            Err(crate::training::TrainError::Collapse { .. }) => {
                                collapsed += 1;
                                continue;
                            }
                            Err(e) => return Err(e.into()),
                        }
                        let stats = trainer.stats().clone();
                        let learner = build_learner(&spec.learner, &spec.tasks)?;
                        let report = eval_mse(learner.as_ref(), trainer.theta(), &spec.tasks, spec.tasks.shots, eval, seed, jobs)?;
                        mse.push(report.mean);
                        ms.push(1e3 * stats.seconds / spec.episode.episodes.max(1) as f64);
                        peak.push(stats.max_peak_bytes as f64);
                    }
                    rows.push(AblationRow {
                        lambda,
                        k,
                        loss_form,
                        distance,
                        mse: MetricReport::from_values("mse", mse),
                        ms_per_episode: MetricReport::from_values("ms_per_episode", ms),
                        peak_bytes: MetricReport::from_values("peak_bytes", peak),
                        collapsed,
                    });
                }
            }
        }
    }
    Ok(AblationTable { seeds: seeds.to_vec(), shots: base.tasks.shots, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{LearnerConfig, MamlConfig};
    use crate::tasks::TaskDistributionConfig;
    use crate::training::EpisodeConfig;

    fn base() -> TrainSpec {
        TrainSpec {
            learner: LearnerConfig::Maml(MamlConfig { hidden: vec![8], ..Default::default() }),
            tasks: TaskDistributionConfig::sinusoid(5, 5),
            contrastive: Some(ContrastiveConfig::default()),
            episode: EpisodeConfig { batch_size: 3, episodes: 3, ..Default::default() },
            seed: 0,
        }
    }

    fn eval() -> EvalConfig {
        EvalConfig { tasks: 4, test_points: 10, ..Default::default() }
    }

    #[test]
    fn lambda_axis_gives_one_row_per_value() {
        let axes = AblationAxes { lambda: vec![0.0, 0.1], ..Default::default() };
        let t = ablation_grid(&base(), &axes, &[1, 2], &eval(), 1).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert!(t.rows.iter().all(|r| r.mse.count == 2 && r.collapsed == 0));
        assert_eq!(t.to_csv().lines().count(), 3);
        let md = t.to_markdown();
        assert!(md.contains("| λ | MSE"));
        assert!(md.contains("- K = 1"));
    }

    #[test]
    fn lambda_zero_cell_matches_plain_training() {
        let axes = AblationAxes { lambda: vec![0.0], ..Default::default() };
        let t = ablation_grid(&base(), &axes, &[5], &eval(), 1).unwrap();
        let spec = TrainSpec { contrastive: None, seed: 5, ..base() };
        let mut tr = Trainer::new(spec.clone()).unwrap();
        tr.run(None).unwrap();
        let l = build_learner(&spec.learner, &spec.tasks).unwrap();
        let m = eval_mse(l.as_ref(), tr.theta(), &spec.tasks, 5, &eval(), 5, 1).unwrap();
        assert_eq!(t.rows[0].mse.values, vec![m.mean]);
        assert_eq!(t.rows.len(), 1);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        assert!(ablation_grid(&base(), &AblationAxes::default(), &[], &eval(), 1).is_err());
        let axes = AblationAxes { k: vec![0], ..Default::default() };
        assert!(ablation_grid(&base(), &axes, &[0], &eval(), 1).is_err());
    }
}
