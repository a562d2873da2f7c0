//! Prototypical networks: class prototypes are mean embeddings and
//! predictions are a softmax over negative squared Euclidean distances.

use serde::{Deserialize, Serialize};

use super::mlp::MlpShape;
use super::{AdaptMode, LearnError, LearnerKind, MetaLearner, TaskModel};
use crate::autodiff::{AutodiffError, BoundParams, ParamVector, Tape, Tensor, Var};
use crate::rng::Rng;
use crate::tasks::Dataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtoNetConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
}

fn default_hidden() -> Vec<usize> {
    vec![32]
}

fn default_embedding_dim() -> usize {
    16
}

impl Default for ProtoNetConfig {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            embedding_dim: default_embedding_dim(),
        }
    }
}

pub struct ProtoNet {
    encoder: MlpShape,
    n_way: usize,
    embedding_dim: usize,
}

impl ProtoNet {
    pub fn new(cfg: ProtoNetConfig, input: usize, n_way: usize) -> Result<Self, LearnError> {
        if cfg.embedding_dim == 0 || n_way == 0 {
            return Err(LearnError::Config("embedding_dim and n_way must be positive".into()));
        }
        Ok(Self {
            encoder: MlpShape::new(input, &cfg.hidden, cfg.embedding_dim),
            n_way,
            embedding_dim: cfg.embedding_dim,
        })
    }

    pub fn n_way(&self) -> usize {
        self.n_way
    }

    fn prototypes(model: &TaskModel) -> Result<(&[Var], Var), LearnError> {
        match model {
            TaskModel::Prototypes { encoder, prototypes } => Ok((encoder, *prototypes)),
            _ => Err(LearnError::Unsupported("protonet expects prototypes".into())),
        }
    }
}

/// `[q, N]` matrix of squared Euclidean distances between rows of `a` and `b`.
pub(crate) fn squared_distances(tape: &mut Tape, a: Var, b: Var) -> Result<Var, AutodiffError> {
    let (q, d) = (tape.shape(a)[0], tape.shape(a)[1]);
    let n = tape.shape(b)[0];
    let ones_d = tape.leaf(Tensor::filled(&[d, 1], 1.0));
    let a2 = tape.square(a);
    let a_norm = tape.matmul(a2, ones_d)?;
    let ones_row = tape.leaf(Tensor::filled(&[1, n], 1.0));
    let a_term = tape.matmul(a_norm, ones_row)?;
    let b2 = tape.square(b);
    let b_norm = tape.matmul(b2, ones_d)?;
    let b_norm = tape.reshape(b_norm, &[n])?;
    let bt = tape.transpose(b)?;
    let cross = tape.matmul(a, bt)?;
    let cross2 = tape.scale(cross, 2.0);
    let ab = tape.add(a_term, b_norm)?;
    let out = tape.sub(ab, cross2)?;
    debug_assert_eq!(tape.shape(out), &[q, n]);
    Ok(out)
}

impl MetaLearner for ProtoNet {
    fn kind(&self) -> LearnerKind {
        LearnerKind::Protonet
    }

    fn init_params(&self, rng: &mut Rng) -> Result<ParamVector, LearnError> {
        let mut pv = ParamVector::new();
        self.encoder.init_into("encoder", &mut pv, rng)?;
        Ok(pv)
    }

    fn adapt(&self, tape: &mut Tape, theta: &BoundParams, data: &Dataset, _mode: AdaptMode) -> Result<TaskModel, LearnError> {
        let labels = data
            .labels()
            .ok_or_else(|| LearnError::Unsupported("protonet needs class labels".into()))?;
        if data.n_way() != Some(self.n_way) {
            return Err(LearnError::Unsupported(format!(
                "dataset is {:?}-way, learner is {}-way",
                data.n_way(),
                self.n_way
            )));
        }
        let n = labels.len();
        let mut counts = vec![0usize; self.n_way];
        for &l in labels {
            counts[l] += 1;
        }
        if let Some(j) = counts.iter().position(|&c| c == 0) {
            return Err(LearnError::MissingClass(j));
        }
        let mut avg = vec![0.0; self.n_way * n];
        for (i, &l) in labels.iter().enumerate() {
            avg[l * n + i] = 1.0 / counts[l] as f64;
        }
        let avg = tape.leaf(Tensor::new(vec![self.n_way, n], avg)?);
        let xs = tape.leaf(data.xs.clone());
        let emb = self.encoder.forward(tape, &theta.vars, xs)?;
        let prototypes = tape.matmul(avg, emb)?;
        Ok(TaskModel::Prototypes {
            encoder: theta.vars.clone(),
            prototypes,
        })
    }

    fn represent(&self, tape: &mut Tape, model: &TaskModel) -> Result<Var, LearnError> {
        let (_, c) = Self::prototypes(model)?;
        Ok(tape.flatten(c)?)
    }

    fn predict(&self, tape: &mut Tape, model: &TaskModel, xs: Var) -> Result<Var, LearnError> {
        let (encoder, c) = Self::prototypes(model)?;
        let emb = self.encoder.forward(tape, encoder, xs)?;
        let d = squared_distances(tape, emb, c)?;
        Ok(tape.neg(d))
    }

    fn repr_dim(&self) -> usize {
        self.n_way * self.embedding_dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::softmax_rows;
    use crate::tasks::Targets;

    /// Single linear layer without hidden units, so `f(x) = x W + b`.
    fn identity_net(n_way: usize, dim: usize) -> (ProtoNet, ParamVector) {
        let p = ProtoNet::new(ProtoNetConfig { hidden: vec![], embedding_dim: dim }, dim, n_way).unwrap();
        let mut w = vec![0.0; dim * dim];
        for i in 0..dim {
            w[i * dim + i] = 1.0;
        }
        let pv = ParamVector::from_entries(vec![
            ("encoder.0.weight".into(), Tensor::new(vec![dim, dim], w).unwrap()),
            ("encoder.0.bias".into(), Tensor::vector(vec![0.0; dim])),
        ])
        .unwrap();
        (p, pv)
    }

    fn data(rows: &[Vec<f64>], labels: &[usize], n_way: usize) -> Dataset {
        Dataset::new(
            Tensor::from_rows(rows).unwrap(),
            Targets::Classes { labels: labels.to_vec(), n_way },
            (0..labels.len()).collect(),
        )
        .unwrap()
    }

    fn repr_of(p: &ProtoNet, pv: &ParamVector, d: &Dataset) -> Vec<f64> {
        let mut tape = Tape::new();
        let b = pv.bind(&mut tape);
        let m = p.adapt(&mut tape, &b, d, AdaptMode::Meta).unwrap();
        let e = p.represent(&mut tape, &m).unwrap();
        tape.value(e).data().to_vec()
    }

    #[test]
    fn prototype_is_mean_and_concatenated_by_label() {
        let (p, pv) = identity_net(2, 2);
        let d = data(&[vec![0.0, 1.0], vec![0.0, 2.0], vec![2.0, 0.0], vec![1.0, 0.0]], &[1, 0, 0, 1], 2);
        // class 0: [0,2],[2,0] -> [1,1]; class 1: [0,1],[1,0] -> [0.5,0.5]
        assert_eq!(repr_of(&p, &pv, &d), vec![1.0, 1.0, 0.5, 0.5]);
        assert_eq!(p.repr_dim(), 4);
    }

    #[test]
    fn one_shot_prototype_is_embedding() {
        let (p, pv) = identity_net(2, 2);
        let d = data(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0, 1], 2);
        assert_eq!(repr_of(&p, &pv, &d), vec![1.0, 0.0, 0.0, 1.0]);
        let (p1, pv1) = identity_net(1, 2);
        let d1 = data(&[vec![3.0, -1.0]], &[0], 1);
        assert_eq!(repr_of(&p1, &pv1, &d1), vec![3.0, -1.0]);
    }

    #[test]
    fn shuffling_support_keeps_representation() {
        let (p, pv) = identity_net(2, 2);
        let rows = [vec![0.3, 1.0], vec![0.1, 2.0], vec![2.5, 0.2], vec![1.0, 0.7]];
        let a = repr_of(&p, &pv, &data(&rows, &[1, 0, 0, 1], 2));
        let shuffled = [rows[3].clone(), rows[2].clone(), rows[0].clone(), rows[1].clone()];
        let b = repr_of(&p, &pv, &data(&shuffled, &[1, 0, 1, 0], 2));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_class_rejected() {
        let (p, pv) = identity_net(3, 2);
        let d = data(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0, 2], 3);
        let mut tape = Tape::new();
        let b = pv.bind(&mut tape);
        assert!(matches!(p.adapt(&mut tape, &b, &d, AdaptMode::Meta), Err(LearnError::MissingClass(1))));
    }

    #[test]
    fn equidistant_query_is_uniform_and_far_prototype_saturates() {
        let (p, pv) = identity_net(2, 2);
        let probs = |sep: f64, q: Vec<f64>| {
            let d = data(&[vec![0.0, 0.0], vec![sep, 0.0]], &[0, 1], 2);
            let mut tape = Tape::new();
            let b = pv.bind(&mut tape);
            let m = p.adapt(&mut tape, &b, &d, AdaptMode::Meta).unwrap();
            let xs = tape.leaf(Tensor::from_rows(&[q]).unwrap());
            let logits = p.predict(&mut tape, &m, xs).unwrap();
            softmax_rows(tape.value(logits)).data().to_vec()
        };
        let mid = probs(2.0, vec![1.0, 5.0]);
        assert!((mid[0] - 0.5).abs() < 1e-12);
        assert!((mid.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let near = probs(2.0, vec![0.0, 0.0])[0];
        let far = probs(6.0, vec![0.0, 0.0])[0];
        assert!(far > near && far > 1.0 - 1e-12);
    }
}
