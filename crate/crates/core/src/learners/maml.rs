//! Optimization-based learners: MAML, first-order MAML and Reptile.
//!
//! All three share the inner loop `θ' = θ - α ∇θ L(D; h_θ)`. Second order
//! keeps the inner gradient on the tape so the outer gradient sees the
//! Hessian-vector terms; first order treats the inner gradient as a constant;
//! Reptile trains the inner loop and moves `θ` toward `θ'`.

use serde::{Deserialize, Serialize};

use super::mlp::MlpShape;
use super::{task_loss, AdaptMode, LearnError, LearnerKind, MetaLearner, TaskModel};
use crate::autodiff::{BoundParams, ParamVector, Tape, Var};
use crate::rng::Rng;
use crate::tasks::Dataset;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MamlOrder {
    #[default]
    Second,
    First,
    Reptile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MamlConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_inner_lr")]
    pub inner_lr: f64,
    #[serde(default = "default_inner_steps")]
    pub inner_steps: usize,
    /// Inner steps used when adapting at meta-test time.
    #[serde(default = "default_test_steps")]
    pub test_steps: usize,
    #[serde(default)]
    pub order: MamlOrder,
    #[serde(default = "default_bias")]
    pub bias: bool,
}

fn default_hidden() -> Vec<usize> {
    vec![40, 40]
}

fn default_inner_lr() -> f64 {
    0.01
}

fn default_inner_steps() -> usize {
    1
}

fn default_test_steps() -> usize {
    10
}

fn default_bias() -> bool {
    true
}

impl Default for MamlConfig {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            inner_lr: default_inner_lr(),
            inner_steps: default_inner_steps(),
            test_steps: default_test_steps(),
            order: MamlOrder::Second,
            bias: true,
        }
    }
}

pub struct Maml {
    cfg: MamlConfig,
    net: MlpShape,
}

impl Maml {
    pub fn new(cfg: MamlConfig, input: usize, output: usize) -> Result<Self, LearnError> {
        if !(cfg.inner_lr >= 0.0) || !cfg.inner_lr.is_finite() {
            return Err(LearnError::Config(format!("inner_lr must be non-negative, got {}", cfg.inner_lr)));
        }
        if cfg.inner_steps == 0 || cfg.test_steps == 0 {
            return Err(LearnError::Config("inner_steps and test_steps must be at least 1".into()));
        }
        let mut net = MlpShape::new(input, &cfg.hidden, output);
        if !cfg.bias {
            net = net.without_bias();
        }
        Ok(Self { cfg, net })
    }

    pub fn config(&self) -> &MamlConfig {
        &self.cfg
    }

    pub fn net(&self) -> &MlpShape {
        &self.net
    }

    /// `steps` plain gradient steps from `weights`.
    pub fn inner_loop(
        &self,
        tape: &mut Tape,
        weights: &[Var],
        data: &Dataset,
        steps: usize,
        create_graph: bool,
    ) -> Result<Vec<Var>, LearnError> {
        if data.is_empty() {
            return Err(LearnError::EmptyDataset);
        }
        let xs = tape.leaf(data.xs.clone());
        let mut w = weights.to_vec();
        for _ in 0..steps {
            let out = self.net.forward(tape, &w, xs)?;
            let loss = task_loss(tape, out, data)?;
            let grads = tape.grad(loss, &w, create_graph)?;
            w = w
                .iter()
                .zip(grads)
                .map(|(&wi, gi)| {
                    let step = tape.scale(gi, self.cfg.inner_lr);
                    tape.sub(wi, step)
                })
                .collect::<Result<_, _>>()?;
        }
        Ok(w)
    }
}

impl MetaLearner for Maml {
    fn kind(&self) -> LearnerKind {
        LearnerKind::Maml
    }

    fn init_params(&self, rng: &mut Rng) -> Result<ParamVector, LearnError> {
        let mut pv = ParamVector::new();
        self.net.init_into("net", &mut pv, rng)?;
        Ok(pv)
    }

    fn adapt(&self, tape: &mut Tape, theta: &BoundParams, data: &Dataset, mode: AdaptMode) -> Result<TaskModel, LearnError> {
        let steps = match mode {
            AdaptMode::Test => self.cfg.test_steps,
            AdaptMode::Meta | AdaptMode::Probe => self.cfg.inner_steps,
        };
        let create_graph = mode.differentiable() && self.cfg.order == MamlOrder::Second;
        let weights = self.inner_loop(tape, &theta.vars, data, steps, create_graph)?;
        Ok(TaskModel::Weights { weights })
    }

    fn represent(&self, tape: &mut Tape, model: &TaskModel) -> Result<Var, LearnError> {
        match model {
            TaskModel::Weights { weights } => Ok(BoundParams { vars: weights.clone() }.flatten(tape)?),
            _ => Err(LearnError::Unsupported("maml expects adapted weights".into())),
        }
    }

    fn predict(&self, tape: &mut Tape, model: &TaskModel, xs: Var) -> Result<Var, LearnError> {
        match model {
            TaskModel::Weights { weights } => Ok(self.net.forward(tape, weights, xs)?),
            _ => Err(LearnError::Unsupported("maml expects adapted weights".into())),
        }
    }

    fn repr_dim(&self) -> usize {
        self.net.param_count()
    }

    fn interpolates(&self) -> bool {
        self.cfg.order == MamlOrder::Reptile
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check, Tensor, DEFAULT_EPS};
    use crate::learners::episodic_loss;
    use crate::rng::{stream, Purpose};
    use crate::tasks::{sample_task, TaskDistributionConfig, TaskInstance, TaskMeta, Targets};

    fn linear(alpha: f64, order: MamlOrder) -> Maml {
        let cfg = MamlConfig {
            hidden: vec![],
            inner_lr: alpha,
            order,
            bias: false,
            ..Default::default()
        };
        Maml::new(cfg, 1, 1).unwrap()
    }

    fn point(x: f64, y: f64) -> Dataset {
        Dataset::new(
            Tensor::new(vec![1, 1], vec![x]).unwrap(),
            Targets::Regression(Tensor::new(vec![1, 1], vec![y]).unwrap()),
            vec![0],
        )
        .unwrap()
    }

    fn theta(v: f64) -> ParamVector {
        ParamVector::from_entries(vec![("net.0.weight".into(), Tensor::new(vec![1, 1], vec![v]).unwrap())]).unwrap()
    }

    #[test]
    fn one_step_linear_example() {
        let m = linear(0.1, MamlOrder::Second);
        let mut tape = Tape::new();
        let p = theta(0.0).bind(&mut tape);
        let model = m.adapt(&mut tape, &p, &point(1.0, 1.0), AdaptMode::Meta).unwrap();
        let e = m.represent(&mut tape, &model).unwrap();
        assert!((tape.value(e).data()[0] - 0.2).abs() < 1e-15);
        assert_eq!(tape.shape(e), &[1]);
    }

    #[test]
    fn zero_lr_is_identity() {
        let m = Maml::new(MamlConfig { inner_lr: 0.0, ..Default::default() }, 1, 1).unwrap();
        let theta = m.init_params(&mut stream(1, Purpose::Init, 0)).unwrap();
        let task = sample_task(&TaskDistributionConfig::sinusoid(5, 5), &mut stream(1, Purpose::Tasks, 0)).unwrap();
        let mut tape = Tape::new();
        let p = theta.bind(&mut tape);
        let model = m.adapt(&mut tape, &p, &task.train, AdaptMode::Meta).unwrap();
        let e = m.represent(&mut tape, &model).unwrap();
        assert_eq!(tape.value(e).data(), theta.flatten().as_slice());
        assert_eq!(m.repr_dim(), theta.numel());
    }

    #[test]
    fn identical_points_identical_repr() {
        let m = Maml::new(MamlConfig::default(), 1, 1).unwrap();
        let theta = m.init_params(&mut stream(2, Purpose::Init, 0)).unwrap();
        let task = sample_task(&TaskDistributionConfig::sinusoid(5, 5), &mut stream(2, Purpose::Tasks, 0)).unwrap();
        let repr = || {
            let mut tape = Tape::new();
            let p = theta.bind(&mut tape);
            let model = m.adapt(&mut tape, &p, &task.train.clone(), AdaptMode::Meta).unwrap();
            let e = m.represent(&mut tape, &model).unwrap();
            tape.value(e).clone()
        };
        assert_eq!(repr(), repr());
    }

    #[test]
    fn empty_dataset_rejected() {
        let m = linear(0.1, MamlOrder::Second);
        let mut tape = Tape::new();
        let p = theta(0.0).bind(&mut tape);
        let empty = point(1.0, 1.0).select(&[]);
        assert!(matches!(
            m.adapt(&mut tape, &p, &empty, AdaptMode::Meta),
            Err(LearnError::EmptyDataset)
        ));
    }

    fn linear_task() -> TaskInstance {
        TaskInstance {
            train: point(1.0, 1.0),
            val: point(2.0, 1.5),
            meta: TaskMeta::Sinusoid { amplitude: 1.0, phase: 0.0 },
        }
    }

    #[test]
    fn linear_meta_gradient_matches_finite_differences() {
        let m = linear(0.1, MamlOrder::Second);
        let task = linear_task();
        let err = finite_diff_check::<_, LearnError>(
            |tape, p| Ok(episodic_loss(&m, tape, p, &task)?.0),
            &theta(0.3),
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn first_order_equals_second_when_inner_gradient_is_constant() {
        // A support point at x = 0 makes the inner gradient identically zero.
        let task = TaskInstance { train: point(0.0, 1.0), ..linear_task() };
        let grad = |order| {
            let m = linear(0.1, order);
            let mut tape = Tape::new();
            let p = theta(1.0).bind(&mut tape);
            let (l, _) = episodic_loss(&m, &mut tape, &p, &task).unwrap();
            tape.grad_values(l, &p.vars).unwrap()[0].data()[0]
        };
        assert_eq!(grad(MamlOrder::Second), grad(MamlOrder::First));
    }

    #[test]
    fn second_order_mlp_meta_gradient() {
        let m = Maml::new(MamlConfig { hidden: vec![6, 5], inner_lr: 0.05, ..Default::default() }, 1, 1).unwrap();
        let theta = m.init_params(&mut stream(3, Purpose::Init, 0)).unwrap();
        let task = sample_task(&TaskDistributionConfig::sinusoid(5, 5), &mut stream(3, Purpose::Tasks, 0)).unwrap();
        let err = finite_diff_check::<_, LearnError>(
            |tape, p| Ok(episodic_loss(&m, tape, p, &task)?.0),
            &theta,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err <= 1e-4, "{err}");
    }
}
