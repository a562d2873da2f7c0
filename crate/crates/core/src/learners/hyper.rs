//! Amortized learner in the conditional-neural-process style.
//!
//! A set encoder embeds every `(x, y)` pair, the embeddings are mean-pooled
//! and projected to task parameters `α`. The decoder is a relu MLP on `x`
//! whose hidden activations are modulated feature-wise: `h ← h ⊙ (1 + γ) + β`,
//! with `(γ, β)` sliced out of `α` per hidden layer.

use serde::{Deserialize, Serialize};

use super::mlp::MlpShape;
use super::{AdaptMode, LearnError, LearnerKind, MetaLearner, TaskModel};
use crate::autodiff::{BoundParams, ParamVector, Tape, Tensor, Var};
use crate::rng::Rng;
use crate::tasks::{Dataset, Targets};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperNetConfig {
    #[serde(default = "default_encoder_hidden")]
    pub encoder_hidden: Vec<usize>,
    /// Width of the pooled set embedding.
    #[serde(default = "default_pooled_dim")]
    pub pooled_dim: usize,
    #[serde(default = "default_decoder_hidden")]
    pub decoder_hidden: Vec<usize>,
}

fn default_encoder_hidden() -> Vec<usize> {
    vec![40]
}

fn default_pooled_dim() -> usize {
    32
}

fn default_decoder_hidden() -> Vec<usize> {
    vec![40, 40]
}

impl Default for HyperNetConfig {
    fn default() -> Self {
        Self {
            encoder_hidden: default_encoder_hidden(),
            pooled_dim: default_pooled_dim(),
            decoder_hidden: default_decoder_hidden(),
        }
    }
}

impl HyperNetConfig {
    /// Length of `α`: a scale and a shift per decoder hidden unit.
    pub fn task_param_dim(&self) -> usize {
        2 * self.decoder_hidden.iter().sum::<usize>()
    }
}

pub struct HyperNet {
    cfg: HyperNetConfig,
    encoder: MlpShape,
    projection: MlpShape,
    decoder: MlpShape,
}

impl HyperNet {
    pub fn new(cfg: HyperNetConfig, input: usize, output: usize) -> Result<Self, LearnError> {
        if cfg.decoder_hidden.is_empty() || cfg.pooled_dim == 0 {
            return Err(LearnError::Config("hypernet needs decoder hidden layers and pooled_dim > 0".into()));
        }
        Ok(Self {
            encoder: MlpShape::new(input + output, &cfg.encoder_hidden, cfg.pooled_dim),
            projection: MlpShape::new(cfg.pooled_dim, &[], cfg.task_param_dim()),
            decoder: MlpShape::new(input, &cfg.decoder_hidden, output),
            cfg,
        })
    }

    fn split<'a>(&self, vars: &'a [Var]) -> (&'a [Var], &'a [Var], &'a [Var]) {
        let (enc, rest) = vars.split_at(self.encoder.tensor_count());
        let (proj, dec) = rest.split_at(self.projection.tensor_count());
        (enc, proj, dec)
    }
}

impl MetaLearner for HyperNet {
    fn kind(&self) -> LearnerKind {
        LearnerKind::Hypernet
    }

    fn init_params(&self, rng: &mut Rng) -> Result<ParamVector, LearnError> {
        let mut pv = ParamVector::new();
        self.encoder.init_into("encoder", &mut pv, rng)?;
        self.projection.init_into("projection", &mut pv, rng)?;
        self.decoder.init_into("decoder", &mut pv, rng)?;
        Ok(pv)
    }

    fn adapt(&self, tape: &mut Tape, theta: &BoundParams, data: &Dataset, _mode: AdaptMode) -> Result<TaskModel, LearnError> {
        if data.is_empty() {
            return Err(LearnError::EmptyDataset);
        }
        let Targets::Regression(ys) = &data.targets else {
            return Err(LearnError::Unsupported("hypernet needs regression targets".into()));
        };
        let n = data.len();
        let (din, dout) = (data.xs.row_len(), ys.row_len());
        let mut pairs = Vec::with_capacity(n * (din + dout));
        for i in 0..n {
            pairs.extend_from_slice(data.xs.row(i));
            pairs.extend_from_slice(ys.row(i));
        }
        let pairs = tape.leaf(Tensor::new(vec![n, din + dout], pairs)?);
        let (enc, proj, _) = self.split(&theta.vars);
        let codes = self.encoder.forward(tape, enc, pairs)?;
        let width = tape.shape(codes)[1];
        let summed = tape.sum_to(codes, &[width])?;
        let pooled = tape.scale(summed, 1.0 / n as f64);
        let pooled = tape.reshape(pooled, &[1, width])?;
        let alpha = self.projection.forward(tape, proj, pooled)?;
        let alpha = tape.flatten(alpha)?;
        Ok(TaskModel::Modulated {
            shared: theta.vars.clone(),
            alpha,
        })
    }

    fn represent(&self, _tape: &mut Tape, model: &TaskModel) -> Result<Var, LearnError> {
        match model {
            TaskModel::Modulated { alpha, .. } => Ok(*alpha),
            _ => Err(LearnError::Unsupported("hypernet expects task parameters".into())),
        }
    }

    fn predict(&self, tape: &mut Tape, model: &TaskModel, xs: Var) -> Result<Var, LearnError> {
        let TaskModel::Modulated { shared, alpha } = model else {
            return Err(LearnError::Unsupported("hypernet expects task parameters".into()));
        };
        let (_, _, dec) = self.split(shared);
        let widths = self.cfg.decoder_hidden.clone();
        let alpha = *alpha;
        let mut offset = 0;
        Ok(self.decoder.forward_with(tape, dec, xs, |tape, layer, h| {
            let w = widths[layer];
            let gamma = tape.slice_rows(alpha, offset, w)?;
            let beta = tape.slice_rows(alpha, offset + w, w)?;
            offset += 2 * w;
            let scale = tape.add_scalar(gamma, 1.0);
            let h = tape.mul(h, scale)?;
            tape.add(h, beta)
        })?)
    }

    fn repr_dim(&self) -> usize {
        self.cfg.task_param_dim()
    }
}
