//! Meta-learners `g(D; θ)` and their model projections `ψ`.
//!
//! Every learner maps a dataset to a [`TaskModel`] on a tape and projects
//! that model to a fixed-length vector. Optimization-based learners project
//! to their adapted weights, metric-based ones to their label-ordered class
//! prototypes, and amortized ones to the task parameters their hypernetwork
//! emits.

mod hyper;
mod maml;
pub mod mlp;
mod proto;

pub use hyper::{HyperNet, HyperNetConfig};
pub use maml::{Maml, MamlConfig, MamlOrder};
pub use proto::{ProtoNet, ProtoNetConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, BoundParams, ParamVector, Tape, Tensor, Var};
use crate::rng::Rng;
use crate::tasks::{Dataset, TaskDistributionConfig, TaskInstance, Targets};

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("cannot adapt on an empty dataset")]
    EmptyDataset,
    #[error("class {0} has no support samples")]
    MissingClass(usize),
    #[error("{0}")]
    Unsupported(String),
    #[error("invalid learner config: {0}")]
    Config(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Which flavour of adaptation is requested.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdaptMode {
    /// Meta-training: the result must stay differentiable in `θ`.
    Meta,
    /// Representation probing at evaluation time, same inner schedule as training.
    Probe,
    /// Test-time adaptation with the evaluation schedule.
    Test,
}

impl AdaptMode {
    pub fn differentiable(self) -> bool {
        matches!(self, AdaptMode::Meta)
    }
}

/// Output of `g(D; θ)`.
#[derive(Clone, Debug)]
pub enum TaskModel {
    /// Adapted network weights, in parameter order.
    Weights { weights: Vec<Var> },
    /// Class prototypes `[N, d]` in ascending label order, plus the encoder.
    Prototypes { encoder: Vec<Var>, prototypes: Var },
    /// Task parameters produced by a hypernetwork, plus the shared weights.
    Modulated { shared: Vec<Var>, alpha: Var },
}

/// The behavioural contract every meta-learner family satisfies.
pub trait MetaLearner: Send + Sync {
    fn kind(&self) -> LearnerKind;

    /// Fresh `θ`.
    fn init_params(&self, rng: &mut Rng) -> Result<ParamVector, LearnError>;

    /// `h = g(D; θ)`.
    fn adapt(&self, tape: &mut Tape, theta: &BoundParams, data: &Dataset, mode: AdaptMode)
        -> Result<TaskModel, LearnError>;

    /// `e = ψ(h)`, a 1-D var of length [`MetaLearner::repr_dim`].
    fn represent(&self, tape: &mut Tape, model: &TaskModel) -> Result<Var, LearnError>;

    /// Regression outputs or class logits for `xs`.
    fn predict(&self, tape: &mut Tape, model: &TaskModel, xs: Var) -> Result<Var, LearnError>;

    fn repr_dim(&self) -> usize;

    /// `L(D; h)`: MSE for regression, mean cross-entropy for classification.
    fn loss(&self, tape: &mut Tape, model: &TaskModel, data: &Dataset) -> Result<Var, LearnError> {
        let xs = tape.leaf(data.xs.clone());
        let out = self.predict(tape, model, xs)?;
        task_loss(tape, out, data)
    }

    /// Reptile-style learners update `θ` with the pseudo-gradient `θ - θ'`
    /// instead of differentiating the episodic loss.
    fn interpolates(&self) -> bool {
        false
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Maml,
    Protonet,
    Hypernet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerConfig {
    Maml(MamlConfig),
    Protonet(ProtoNetConfig),
    Hypernet(HyperNetConfig),
}

impl LearnerConfig {
    pub fn kind(&self) -> LearnerKind {
        match self {
            LearnerConfig::Maml(_) => LearnerKind::Maml,
            LearnerConfig::Protonet(_) => LearnerKind::Protonet,
            LearnerConfig::Hypernet(_) => LearnerKind::Hypernet,
        }
    }
}

/// Instantiates the learner for a task family.
pub fn build_learner(cfg: &LearnerConfig, tasks: &TaskDistributionConfig) -> Result<Box<dyn MetaLearner>, LearnError> {
    let input = tasks.input_dim();
    Ok(match cfg {
        LearnerConfig::Maml(c) => {
            let output = tasks.n_way().unwrap_or(1);
            Box::new(Maml::new(c.clone(), input, output)?)
        }
        LearnerConfig::Protonet(c) => {
            let n_way = tasks
                .n_way()
                .ok_or_else(|| LearnError::Unsupported("protonet needs a classification task family".into()))?;
            Box::new(ProtoNet::new(c.clone(), input, n_way)?)
        }
        LearnerConfig::Hypernet(c) => {
            if tasks.n_way().is_some() {
                return Err(LearnError::Unsupported("hypernet supports regression tasks only".into()));
            }
            Box::new(HyperNet::new(c.clone(), input, 1)?)
        }
    })
}

/// Task loss of raw outputs against `data`'s targets.
pub fn task_loss(tape: &mut Tape, out: Var, data: &Dataset) -> Result<Var, LearnError> {
    if data.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    match &data.targets {
        Targets::Regression(ys) => {
            let ys = tape.leaf(ys.clone());
            Ok(tape.mse(out, ys)?)
        }
        Targets::Classes { labels, n_way } => Ok(cross_entropy(tape, out, labels, *n_way)?),
    }
}

/// Mean negative log-softmax at the labelled column, stabilized by the row max.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize], n_way: usize) -> Result<Var, AutodiffError> {
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 2 || shape[0] != labels.len() || shape[1] != n_way {
        return Err(AutodiffError::ShapeMismatch {
            op: "cross_entropy",
            left: shape,
            right: vec![labels.len(), n_way],
        });
    }
    let q = labels.len();
    let values = tape.value(logits);
    let mut shift = Vec::with_capacity(q * n_way);
    let mut onehot = vec![0.0; q * n_way];
    for (i, &label) in labels.iter().enumerate() {
        let m = values.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        shift.extend(std::iter::repeat(m).take(n_way));
        onehot[i * n_way + label] = 1.0;
    }
    let shift = tape.leaf(Tensor::new(vec![q, n_way], shift)?);
    let onehot = tape.leaf(Tensor::new(vec![q, n_way], onehot)?);
    let ones = tape.leaf(Tensor::filled(&[n_way, 1], 1.0));
    let z = tape.sub(logits, shift)?;
    let ez = tape.exp(z);
    let sums = tape.matmul(ez, ones)?;
    let lse = tape.log(sums);
    let zy = tape.mul(z, onehot)?;
    let picked = tape.matmul(zy, ones)?;
    let nll = tape.sub(lse, picked)?;
    Ok(tape.mean(nll))
}

/// Row-wise softmax of a logits matrix.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let mut out = Vec::with_capacity(logits.numel());
    for i in 0..logits.rows() {
        let row = logits.row(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.into_iter().map(|v| v / s));
    }
    Tensor::new(logits.shape().to_vec(), out).expect("shape preserved")
}

/// Validation loss of the model adapted on the training set, plus that model.
///
/// Reptile-style learners report the loss of the inner-trained model on the
/// data it was trained on.
pub fn episodic_loss(
    learner: &dyn MetaLearner,
    tape: &mut Tape,
    theta: &BoundParams,
    task: &TaskInstance,
) -> Result<(Var, TaskModel), LearnError> {
    if task.val.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    let model = learner.adapt(tape, theta, &task.train, AdaptMode::Meta)?;
    let loss = episodic_loss_for(learner, tape, &model, task)?;
    Ok((loss, model))
}

/// Like [`episodic_loss`], for a model already adapted on `task.train`.
pub fn episodic_loss_for(
    learner: &dyn MetaLearner,
    tape: &mut Tape,
    model: &TaskModel,
    task: &TaskInstance,
) -> Result<Var, LearnError> {
    if task.val.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    let eval_on = if learner.interpolates() {
        &task.train
    } else {
        &task.val
    };
    learner.loss(tape, model, eval_on)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    #[test]
    fn uniform_classifier_cross_entropy_is_ln_n() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::zeros(&[3, 5]));
        let l = cross_entropy(&mut tape, logits, &[0, 3, 4], 5).unwrap();
        assert!((tape.scalar(l) - 5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn mse_values() {
        let data = Dataset::new(
            Tensor::zeros(&[2, 1]),
            Targets::Regression(Tensor::filled(&[2, 1], 1.0)),
            vec![0, 1],
        )
        .unwrap();
        let mut tape = Tape::new();
        let zero = tape.leaf(Tensor::zeros(&[2, 1]));
        let l = task_loss(&mut tape, zero, &data).unwrap();
        assert_eq!(tape.scalar(l), 1.0);
        let perfect = tape.leaf(Tensor::filled(&[2, 1], 1.0));
        let l = task_loss(&mut tape, perfect, &data).unwrap();
        assert_eq!(tape.scalar(l), 0.0);
    }

    #[test]
    fn softmax_rows_normalizes() {
        let p = softmax_rows(&Tensor::from_rows(&[vec![0.0, -1.0, -1.0]]).unwrap());
        let e = (-1f64).exp();
        let z = 1.0 + 2.0 * e;
        assert!((p.data()[0] - 1.0 / z).abs() < 1e-15);
        assert!((p.data()[1] - e / z).abs() < 1e-15);
        assert!((p.data()[0] - 0.576).abs() < 1e-3 && (p.data()[2] - 0.212).abs() < 1e-3);
    }

    #[test]
    fn empty_val_rejected() {
        let cfg = TaskDistributionConfig::sinusoid(5, 0);
        let learner = build_learner(&LearnerConfig::Maml(MamlConfig::default()), &cfg).unwrap();
        let task = crate::tasks::sample_task(&cfg, &mut stream(0, Purpose::Tasks, 0)).unwrap();
        let theta = learner.init_params(&mut stream(0, Purpose::Init, 0)).unwrap();
        let mut tape = Tape::new();
        let bound = theta.bind(&mut tape);
        assert!(matches!(
            episodic_loss(learner.as_ref(), &mut tape, &bound, &task),
            Err(LearnError::EmptyDataset)
        ));
    }

    #[test]
    fn family_mismatch_rejected() {
        let sine = TaskDistributionConfig::sinusoid(5, 5);
        assert!(build_learner(&LearnerConfig::Protonet(ProtoNetConfig::default()), &sine).is_err());
        let blobs = TaskDistributionConfig::blobs(Default::default(), 1, 1);
        assert!(build_learner(&LearnerConfig::Hypernet(HyperNetConfig::default()), &blobs).is_err());
    }
}
