//! Synthetic task distributions and subset sampling.

mod generate;
mod jsonl;
mod subsets;

pub use generate::{sample_batch, sample_task};
pub use jsonl::{dump_jsonl, load_jsonl, TaskRecord};
pub use subsets::{sample_subsets, SubsetStrategy};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("invalid task config: {0}")]
    Config(String),
    #[error("subset size {m} exceeds pool size {pool}")]
    SubsetTooLarge { m: usize, pool: usize },
    #[error("invalid subset request: {0}")]
    Subset(String),
    #[error("malformed task record: {0}")]
    Record(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Regression targets or class labels, one per row of `xs`.
#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Regression(Tensor),
    Classes { labels: Vec<usize>, n_way: usize },
}

/// Points of one task, with their positions in the task's pooled `train ∪ val`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub xs: Tensor,
    pub targets: Targets,
    pub indices: Vec<usize>,
}

impl Dataset {
    pub fn new(xs: Tensor, targets: Targets, indices: Vec<usize>) -> Result<Self, TaskError> {
        let n = xs.rows();
        let tn = match &targets {
            Targets::Regression(ys) => ys.rows(),
            Targets::Classes { labels, n_way } => {
                if let Some(bad) = labels.iter().find(|&&l| l >= *n_way) {
                    return Err(TaskError::Record(format!("label {bad} outside [0, {n_way})")));
                }
                labels.len()
            }
        };
        if xs.ndim() != 2 || tn != n || indices.len() != n {
            return Err(TaskError::Record(format!(
                "xs {:?} / targets {tn} / indices {} disagree",
                xs.shape(),
                indices.len()
            )));
        }
        Ok(Self { xs, targets, indices })
    }

    pub fn len(&self) -> usize {
        self.xs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.xs.row_len()
    }

    pub fn n_way(&self) -> Option<usize> {
        match self.targets {
            Targets::Classes { n_way, .. } => Some(n_way),
            Targets::Regression(_) => None,
        }
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Classes { labels, .. } => Some(labels),
            Targets::Regression(_) => None,
        }
    }

    /// Rows at the given local positions; provenance indices follow.
    pub fn select(&self, local: &[usize]) -> Self {
        let targets = match &self.targets {
            Targets::Regression(ys) => Targets::Regression(ys.select_rows(local)),
            Targets::Classes { labels, n_way } => Targets::Classes {
                labels: local.iter().map(|&i| labels[i]).collect(),
                n_way: *n_way,
            },
        };
        Self {
            xs: self.xs.select_rows(local),
            targets,
            indices: local.iter().map(|&i| self.indices[i]).collect(),
        }
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &Self) -> Result<Self, TaskError> {
        let cat = |a: &Tensor, b: &Tensor| -> Result<Tensor, TaskError> {
            if a.row_len() != b.row_len() {
                return Err(TaskError::Record("row width mismatch".into()));
            }
            let mut data = a.data().to_vec();
            data.extend_from_slice(b.data());
            Tensor::new(vec![a.rows() + b.rows(), a.row_len()], data)
                .map_err(|e| TaskError::Record(e.to_string()))
        };
        let targets = match (&self.targets, &other.targets) {
            (Targets::Regression(a), Targets::Regression(b)) => Targets::Regression(cat(a, b)?),
            (Targets::Classes { labels: a, n_way }, Targets::Classes { labels: b, n_way: nb }) if n_way == nb => {
                Targets::Classes {
                    labels: a.iter().chain(b).copied().collect(),
                    n_way: *n_way,
                }
            }
            _ => return Err(TaskError::Record("incompatible targets".into())),
        };
        let mut indices = self.indices.clone();
        indices.extend_from_slice(&other.indices);
        Ok(Self {
            xs: cat(&self.xs, &other.xs)?,
            targets,
            indices,
        })
    }
}

/// Generator parameters that fully determine a task's target function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskMeta {
    Sinusoid { amplitude: f64, phase: f64 },
    GaussianBlobs { means: Vec<Vec<f64>> },
}

impl TaskMeta {
    /// Noise-free regression target; `None` for classification tasks.
    pub fn target(&self, x: f64) -> Option<f64> {
        match *self {
            TaskMeta::Sinusoid { amplitude, phase } => Some(amplitude * (x + phase).sin()),
            TaskMeta::GaussianBlobs { .. } => None,
        }
    }
}

/// One task: a training set, a disjoint validation set and its generator.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskInstance {
    pub train: Dataset,
    pub val: Dataset,
    pub meta: TaskMeta,
}

impl TaskInstance {
    /// `train ∪ val`, train rows first.
    pub fn pool(&self) -> Dataset {
        self.train
            .concat(&self.val)
            .expect("train and val share a layout by construction")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinusoidConfig {
    #[serde(default = "default_amplitude")]
    pub amplitude: [f64; 2],
    #[serde(default = "default_phase")]
    pub phase: [f64; 2],
    #[serde(default = "default_input")]
    pub input: [f64; 2],
}

fn default_amplitude() -> [f64; 2] {
    [0.1, 5.0]
}

fn default_phase() -> [f64; 2] {
    [0.0, PI]
}

fn default_input() -> [f64; 2] {
    [-5.0, 5.0]
}

impl Default for SinusoidConfig {
    fn default() -> Self {
        Self {
            amplitude: default_amplitude(),
            phase: default_phase(),
            input: default_input(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobsConfig {
    pub n_way: usize,
    pub dim: usize,
    #[serde(default = "default_spread")]
    pub spread: f64,
    #[serde(default = "default_mean_range")]
    pub mean_range: [f64; 2],
}

fn default_spread() -> f64 {
    0.5
}

fn default_mean_range() -> [f64; 2] {
    [-3.0, 3.0]
}

impl Default for BlobsConfig {
    fn default() -> Self {
        Self {
            n_way: 5,
            dim: 8,
            spread: default_spread(),
            mean_range: default_mean_range(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskFamily {
    Sinusoid(SinusoidConfig),
    GaussianBlobs(BlobsConfig),
}

/// `p(τ)`. For blobs, `shots` and `val_size` count points per class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskDistributionConfig {
    pub family: TaskFamily,
    pub shots: usize,
    #[serde(default = "default_val_size")]
    pub val_size: usize,
    /// Added to both ends of the amplitude range.
    #[serde(default)]
    pub amplitude_shift: f64,
}

fn default_val_size() -> usize {
    100
}

impl TaskDistributionConfig {
    pub fn sinusoid(shots: usize, val_size: usize) -> Self {
        Self {
            family: TaskFamily::Sinusoid(SinusoidConfig::default()),
            shots,
            val_size,
            amplitude_shift: 0.0,
        }
    }

    pub fn blobs(blobs: BlobsConfig, shots: usize, val_size: usize) -> Self {
        Self {
            family: TaskFamily::GaussianBlobs(blobs),
            shots,
            val_size,
            amplitude_shift: 0.0,
        }
    }

    pub fn with_shift(mut self, delta: f64) -> Self {
        self.amplitude_shift = delta;
        self
    }

    pub fn with_shots(mut self, shots: usize) -> Self {
        self.shots = shots;
        self
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        let range = |name: &str, r: [f64; 2]| {
            if r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] {
                Ok(())
            } else {
                Err(TaskError::Config(format!("{name} range {r:?} is empty")))
            }
        };
        if self.shots == 0 {
            return Err(TaskError::Config("shots must be at least 1".into()));
        }
        if !self.amplitude_shift.is_finite() {
            return Err(TaskError::Config("amplitude_shift must be finite".into()));
        }
        match &self.family {
            TaskFamily::Sinusoid(s) => {
                range("amplitude", s.amplitude)?;
                range("phase", s.phase)?;
                range("input", s.input)?;
            }
            TaskFamily::GaussianBlobs(b) => {
                if b.n_way == 0 || b.dim == 0 {
                    return Err(TaskError::Config("n_way and dim must be positive".into()));
                }
                if !(b.spread >= 0.0) {
                    return Err(TaskError::Config("spread must be non-negative".into()));
                }
                range("mean", b.mean_range)?;
            }
        }
        Ok(())
    }

    pub fn n_way(&self) -> Option<usize> {
        match &self.family {
            TaskFamily::GaussianBlobs(b) => Some(b.n_way),
            TaskFamily::Sinusoid(_) => None,
        }
    }

    pub fn input_dim(&self) -> usize {
        match &self.family {
            TaskFamily::GaussianBlobs(b) => b.dim,
            TaskFamily::Sinusoid(_) => 1,
        }
    }
}
