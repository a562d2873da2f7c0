//! Meta-testing protocols: held-out error, clustering of model
//! representations, inner/inter-task distance distributions and sweeps over
//! shots and amplitude shift. Nothing here mutates `θ`.

mod ablation;
pub mod cluster;
pub mod plot;
mod reports;

pub use ablation::{ablation_grid, AblationAxes, AblationRow, AblationTable};
pub use cluster::{cluster_scores, l2_normalize, pca_2d, ClusterScores};
pub use reports::{write_cluster_report, write_distance_report, write_sweep_report};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{ParamVector, Tape};
use crate::contrastive::{distance_value, ContrastError, DistanceKind};
use crate::learners::{AdaptMode, LearnError, MetaLearner};
use crate::rng::{stream, Purpose};
use crate::tasks::{sample_subsets, sample_task, Dataset, SubsetStrategy, TaskDistributionConfig, TaskError, TaskInstance, Targets};
use crate::training::{par_map, TrainError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluation input: {0}")]
    Input(String),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Contrast(#[from] ContrastError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Mean and sample standard deviation of raw values (tasks or seeds).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

impl MetricReport {
    pub fn from_values(metric: impl Into<String>, values: Vec<f64>) -> Self {
        let count = values.len();
        let mean = if count == 0 { f64::NAN } else { values.iter().sum::<f64>() / count as f64 };
        let std = if count < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
        };
        Self { metric: metric.into(), count, mean, std, values }
    }
}

/// The `ClusterEvalConfig` protocol: `tasks × subsets` representations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterEvalConfig {
    #[serde(default = "ten")]
    pub tasks: usize,
    #[serde(default = "ten")]
    pub subsets: usize,
    #[serde(default = "ten")]
    pub subset_size: usize,
}

fn ten() -> usize {
    10
}

impl Default for ClusterEvalConfig {
    fn default() -> Self {
        Self { tasks: 10, subsets: 10, subset_size: 10 }
    }
}

/// The distance-distribution protocol: each task's pool is split into
/// `subsets` disjoint parts of `subset_size` points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceEvalConfig {
    #[serde(default = "thousand")]
    pub tasks: usize,
    #[serde(default = "ten")]
    pub subsets: usize,
    #[serde(default = "ten")]
    pub subset_size: usize,
}

fn thousand() -> usize {
    1000
}

impl Default for DistanceEvalConfig {
    fn default() -> Self {
        Self { tasks: 1000, subsets: 10, subset_size: 10 }
    }
}

impl DistanceEvalConfig {
    pub fn pooled_size(&self) -> usize {
        self.subsets * self.subset_size
    }
}

/// Settings of every evaluation protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Fresh tasks per error estimate.
    #[serde(default = "default_mse_tasks")]
    pub tasks: usize,
    /// Held-out points per task.
    #[serde(default = "default_test_points")]
    pub test_points: usize,
    #[serde(default = "default_shots")]
    pub shots: Vec<usize>,
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
    #[serde(default)]
    pub cluster: ClusterEvalConfig,
    #[serde(default)]
    pub distances: DistanceEvalConfig,
}

fn default_mse_tasks() -> usize {
    500
}

fn default_test_points() -> usize {
    100
}

fn default_shots() -> Vec<usize> {
    vec![5, 10, 20]
}

fn default_deltas() -> Vec<f64> {
    vec![0.0, 1.0, 2.0, 3.0]
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tasks: default_mse_tasks(),
            test_points: default_test_points(),
            shots: default_shots(),
            deltas: default_deltas(),
            cluster: ClusterEvalConfig::default(),
            distances: DistanceEvalConfig::default(),
        }
    }
}

/// Disjoint task-index ranges per protocol so protocols never share tasks.
#[derive(Clone, Copy)]
enum Protocol {
    Error = 1,
    Cluster = 2,
    Distances = 3,
}

fn task_stream(seed: u64, protocol: Protocol, salt: u64, index: usize) -> crate::rng::Rng {
    stream(seed, Purpose::EvalTasks, ((protocol as u64) << 48) ^ (salt << 24) ^ index as u64)
}

fn subset_stream(seed: u64, protocol: Protocol, index: usize) -> crate::rng::Rng {
    stream(seed, Purpose::EvalSubsets, ((protocol as u64) << 48) ^ index as u64)
}

/// A task whose training set has `points` points (per class for classification).
fn task_with_pool(cfg: &TaskDistributionConfig, points: usize, rng: &mut crate::rng::Rng) -> Result<TaskInstance, EvalError> {
    let per = match cfg.n_way() {
        Some(n) => points.div_ceil(n),
        None => points,
    };
    let mut c = cfg.clone();
    c.shots = per;
    c.val_size = 0;
    Ok(sample_task(&c, rng)?)
}

/// Loss (and accuracy for classification) of the test-time adapted model on held-out points.
fn task_error(learner: &dyn MetaLearner, theta: &ParamVector, task: &TaskInstance) -> Result<(f64, Option<f64>), EvalError> {
    let mut tape = Tape::new();
    let bound = theta.bind(&mut tape);
    let model = learner.adapt(&mut tape, &bound, &task.train, AdaptMode::Test)?;
    let xs = tape.leaf(task.val.xs.clone());
    let out = learner.predict(&mut tape, &model, xs)?;
    let loss = crate::learners::task_loss(&mut tape, out, &task.val)?;
    let accuracy = match &task.val.targets {
        Targets::Regression(_) => None,
        Targets::Classes { labels, .. } => {
            let logits = tape.value(out);
            let hits = labels
                .iter()
                .enumerate()
                .filter(|&(i, &l)| {
                    let row = logits.row(i);
                    let best = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a)));
                    best == Some(l)
                })
                .count();
            Some(hits as f64 / labels.len() as f64)
        }
    };
    Ok((tape.scalar(loss), accuracy))
}

/// Held-out loss after test-time adaptation on `shots`-shot training sets.
///
/// `values` holds the per-task losses; the mean is the reported MSE (mean
/// cross-entropy for classification). Tasks depend only on `seed`, the
/// shot count and `cfg.amplitude_shift`.
pub fn eval_mse(
    learner: &dyn MetaLearner,
    theta: &ParamVector,
    tasks: &TaskDistributionConfig,
    shots: usize,
    eval: &EvalConfig,
    seed: u64,
    jobs: usize,
) -> Result<MetricReport, EvalError> {
    Ok(eval_errors(learner, theta, tasks, shots, eval, seed, jobs)?.0)
}

/// [`eval_mse`] plus classification accuracy when the family has labels.
pub fn eval_errors(
    learner: &dyn MetaLearner,
    theta: &ParamVector,
    tasks: &TaskDistributionConfig,
    shots: usize,
    eval: &EvalConfig,
    seed: u64,
    jobs: usize,
) -> Result<(MetricReport, Option<MetricReport>), EvalError> {
    if eval.tasks == 0 || eval.test_points == 0 {
        return Err(EvalError::Input("evaluation needs at least one task and one test point".into()));
    }
    let mut cfg = tasks.clone().with_shots(shots);
    cfg.val_size = eval.test_points;
    // The shift changes amplitudes only, so the same draws are reused across shifts.
    let salt = shots as u64;
    let results = par_map((0..eval.tasks).collect(), jobs, |i| {
        let task = sample_task(&cfg, &mut task_stream(seed, Protocol::Error, salt, i))?;
        task_error(learner, theta, &task)
    });
    let mut losses = Vec::with_capacity(eval.tasks);
    let mut accs = Vec::new();
    for r in results {
        let (l, a) = r?;
        losses.push(l);
        accs.extend(a);
    }
    let name = if tasks.n_way().is_some() { "cross_entropy" } else { "mse" };
    let acc = (!accs.is_empty()).then(|| MetricReport::from_values("accuracy", accs));
    Ok((MetricReport::from_values(name, losses), acc))
}

/// Error per shot count.
pub fn shot_sweep(
    learner: &dyn MetaLearner,
    theta: &ParamVector,
    tasks: &TaskDistributionConfig,
    shots: &[usize],
    eval: &EvalConfig,
    seed: u64,
    jobs: usize,
) -> Result<Vec<(f64, MetricReport)>, EvalError> {
    shots
        .iter()
        .map(|&n| Ok((n as f64, eval_mse(learner, theta, tasks, n, eval, seed, jobs)?)))
        .collect()
}

/// Error per amplitude shift `δ`, i.e. amplitudes drawn from `[lo + δ, hi + δ]`.
pub fn ood_sweep(
    learner: &dyn MetaLearner,
    theta: &ParamVector,
    tasks: &TaskDistributionConfig,
    deltas: &[f64],
    shots: usize,
    eval: &EvalConfig,
    seed: u64,
    jobs: usize,
) -> Result<Vec<(f64, MetricReport)>, EvalError> {
    deltas
        .iter()
        .map(|&d| {
            let shifted = tasks.clone().with_shift(d);
            Ok((d, eval_mse(learner, theta, &shifted, shots, eval, seed, jobs)?))
        })
        .collect()
}

/// `ψ(g(D; θ))` as plain values, with the training-time inner schedule.
pub fn represent(learner: &dyn MetaLearner, theta: &ParamVector, data: &Dataset) -> Result<Vec<f64>, EvalError> {
    let mut tape = Tape::new();
    let bound = theta.bind(&mut tape);
    let model = learner.adapt(&mut tape, &bound, data, AdaptMode::Probe)?;
    let e = learner.represent(&mut tape, &model)?;
    Ok(tape.value(e).data().to_vec())
}

/// Clustering of subset-trained representations with task identity as label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub scores: ClusterScores,
    pub labels: Vec<usize>,
    pub coords: Vec<[f64; 2]>,
    pub normalized: bool,
}

pub fn cluster_models(
    learner: &dyn MetaLearner,
    theta: &ParamVector,
    tasks: &TaskDistributionConfig,
    cfg: &ClusterEvalConfig,
    normalize: bool,
    seed: u64,
    jobs: usize,
) -> Result<ClusterResult, EvalError> {
    if cfg.tasks < 2 || cfg.subsets < 2 || cfg.subset_size == 0 {
        return Err(EvalError::Input("clustering needs at least 2 tasks, 2 subsets and non-empty subsets".into()));
    }
    let strategy = SubsetStrategy::RandomM { m: cfg.subset_size, class_balanced: tasks.n_way().is_some() };
    let per_task = par_map((0..cfg.tasks).collect(), jobs, |t| -> Result<Vec<Vec<f64>>, EvalError> {
        let task = task_with_pool(tasks, cfg.subsets * cfg.subset_size, &mut task_stream(seed, Protocol::Cluster, 0, t))?;
        let subsets = sample_subsets(&task, &strategy, cfg.subsets, &mut subset_stream(seed, Protocol::Cluster, t))?;
        subsets.iter().map(|s| represent(learner, theta, s)).collect()
    });
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (t, reps) in per_task.into_iter().enumerate() {
        for r in reps? {
            points.push(r);
            labels.push(t);
        }
    }
    if normalize {
        points = l2_normalize(&points);
    }
    let scores = cluster_scores(&points, &labels)?;
    let coords = pca_2d(&points)?;
    Ok(ClusterResult { scores, labels, coords, normalized: normalize })
}

/// Per-task inner distances and pairwise inter-task distances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceDistributions {
    pub kind: DistanceKind,
    pub d_in: Vec<f64>,
    pub d_out: Vec<f64>,
    pub mean_in: f64,
    pub mean_out: f64,
}

pub fn distance_distributions(
    learner: &dyn MetaLearner,
    theta: &ParamVector,
    tasks: &TaskDistributionConfig,
    cfg: &DistanceEvalConfig,
    kind: DistanceKind,
    seed: u64,
    jobs: usize,
) -> Result<DistanceDistributions, EvalError> {
    if cfg.tasks < 2 || cfg.subsets == 0 || cfg.subset_size == 0 {
        return Err(EvalError::Input("distance protocol needs at least 2 tasks and non-empty subsets".into()));
    }
    let per_task = par_map((0..cfg.tasks).collect(), jobs, |t| -> Result<(f64, Vec<f64>), EvalError> {
        let task = task_with_pool(tasks, cfg.pooled_size(), &mut task_stream(seed, Protocol::Distances, 0, t))?;
        let pool = task.train;
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut subset_stream(seed, Protocol::Distances, t));
        let anchor = represent(learner, theta, &pool)?;
        let mut d_in = 0.0;
        for part in order.chunks(cfg.subset_size).take(cfg.subsets) {
            let mut idx = part.to_vec();
            idx.sort_unstable();
            let e = represent(learner, theta, &pool.select(&idx))?;
            d_in += distance_value(kind, &e, &anchor)?;
        }
        Ok((d_in / cfg.subsets as f64, anchor))
    });
    let mut d_in = Vec::with_capacity(cfg.tasks);
    let mut anchors = Vec::with_capacity(cfg.tasks);
    for r in per_task {
        let (d, a) = r?;
        d_in.push(d);
        anchors.push(a);
    }
    let d_out = pairwise_values(kind, &anchors)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(DistanceDistributions { kind, mean_in: mean(&d_in), mean_out: mean(&d_out), d_in, d_out })
}

/// Distances of all unordered pairs, row-major over `i < j`.
fn pairwise_values(kind: DistanceKind, reprs: &[Vec<f64>]) -> Result<Vec<f64>, EvalError> {
    let mut out = Vec::with_capacity(reprs.len() * (reprs.len() - 1) / 2);
    if kind == DistanceKind::Cosine {
        if reprs.iter().any(|r| r.iter().all(|&x| x == 0.0)) {
            return Err(ContrastError::ZeroVector.into());
        }
        let unit = l2_normalize(reprs);
        for i in 0..unit.len() {
            for j in i + 1..unit.len() {
                out.push(1.0 - unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum::<f64>());
            }
        }
    } else {
        for i in 0..reprs.len() {
            for j in i + 1..reprs.len() {
                out.push(distance_value(kind, &reprs[i], &reprs[j])?);
            }
        }
    }
    Ok(out)
}
