//! Finite-difference audit of every differentiable loss path.

use crate::autodiff::{analytic_gradient, max_relative_error, numeric_gradient, BoundParams, ParamVector, Tape, Tensor, Var, DEFAULT_EPS};
use crate::contrastive::{combined_loss, contrastive_terms, ContrastError, ContrastiveConfig, DistanceKind, LossForm};
use crate::learners::{build_learner, episodic_loss, HyperNetConfig, LearnError, LearnerConfig, MamlConfig, MamlOrder, MetaLearner, ProtoNetConfig};
use crate::rng::{stream, Purpose};
use crate::tasks::{sample_task, BlobsConfig, TaskDistributionConfig, TaskInstance};

/// Components above this relative error fail the audit.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckLine {
    pub component: String,
    pub parameters: usize,
    pub max_rel_error: f64,
}

impl GradcheckLine {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= GRADCHECK_TOLERANCE
    }
}

#[derive(Debug, thiserror::Error)]
enum CheckError {
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Contrast(#[from] ContrastError),
    #[error(transparent)]
    Autodiff(#[from] crate::autodiff::AutodiffError),
}

fn check<F>(component: &str, theta: &ParamVector, corrupt: bool, f: F) -> Result<GradcheckLine, String>
where
    F: Fn(&mut Tape, &BoundParams) -> Result<Var, CheckError>,
{
    let run = || -> Result<f64, CheckError> {
        let mut analytic = analytic_gradient(&f, theta)?;
        if corrupt {
            // Negative control: a wrong analytic gradient must be caught.
            analytic[0] += 1e-2 * analytic[0].abs().max(1.0);
        }
        let numeric = numeric_gradient(&f, theta, DEFAULT_EPS)?;
        Ok(max_relative_error(&analytic, &numeric))
    };
    let err = run().map_err(|e| format!("{component}: {e}"))?;
    Ok(GradcheckLine { component: component.to_string(), parameters: theta.numel(), max_rel_error: err })
}

fn tasks_for(cfg: &TaskDistributionConfig, n: usize) -> Result<Vec<TaskInstance>, String> {
    (0..n)
        .map(|i| sample_task(cfg, &mut stream(0, Purpose::Misc, i as u64)).map_err(|e| e.to_string()))
        .collect()
}

fn learner_line(name: &str, cfg: LearnerConfig, tasks: TaskDistributionConfig, corrupt: bool) -> Result<GradcheckLine, String> {
    let learner = build_learner(&cfg, &tasks).map_err(|e| e.to_string())?;
    let theta = learner.init_params(&mut stream(0, Purpose::Init, 0)).map_err(|e| e.to_string())?;
    let batch = tasks_for(&tasks, 2)?;
    check(name, &theta, corrupt, |tape, bound| {
        let mut total: Option<Var> = None;
        for task in &batch {
            let (l, _) = episodic_loss(learner.as_ref(), tape, bound, task)?;
            total = Some(match total {
                None => l,
                Some(t) => tape.add(t, l)?,
            });
        }
        Ok(total.expect("non-empty batch"))
    })
}

/// The full contrastive objective through the learner, on one tape.
fn objective(
    learner: &dyn MetaLearner,
    cfg: &ContrastiveConfig,
    batch: &[TaskInstance],
    tape: &mut Tape,
    bound: &BoundParams,
) -> Result<Var, CheckError> {
    let mut lv: Option<Var> = None;
    let mut subsets = Vec::new();
    let mut anchors = Vec::new();
    for task in batch {
        let (l, model) = episodic_loss(learner, tape, bound, task)?;
        lv = Some(match lv {
            None => l,
            Some(t) => tape.add(t, l)?,
        });
        subsets.push(vec![learner.represent(tape, &model)?]);
        let pooled = learner.adapt(tape, bound, &task.pool(), crate::learners::AdaptMode::Meta)?;
        anchors.push(learner.represent(tape, &pooled)?);
    }
    let lv = tape.scale(lv.expect("non-empty batch"), 1.0 / batch.len() as f64);
    let terms = contrastive_terms(tape, cfg, &subsets, &anchors)?;
    Ok(combined_loss(tape, lv, terms.loss, cfg.lambda)?)
}

/// Contrastive forms checked directly against free representation vectors.
fn contrastive_line(form: LossForm, distance: DistanceKind, corrupt: bool) -> Result<GradcheckLine, String> {
    let (b, d) = (4, 6);
    let mut theta = ParamVector::new();
    let mut rng = stream(0, Purpose::Misc, 99);
    let normal = rand_distr::StandardNormal;
    for i in 0..b {
        for which in ["subset", "anchor"] {
            let v: Vec<f64> = (0..d).map(|_| rand::Rng::sample(&mut rng, normal)).collect();
            theta.push(format!("{which}{i}"), Tensor::vector(v)).map_err(|e| e.to_string())?;
        }
    }
    let cfg = ContrastiveConfig { loss_form: form, distance, ..Default::default() };
    let name = format!("contrastive {} / {}", label(&form), label(&distance));
    check(&name, &theta, corrupt, |tape, bound| {
        let subsets: Vec<Vec<Var>> = (0..b).map(|i| vec![bound.vars[2 * i]]).collect();
        let anchors: Vec<Var> = (0..b).map(|i| bound.vars[2 * i + 1]).collect();
        Ok(contrastive_terms(tape, &cfg, &subsets, &anchors)?.loss)
    })
}

fn label<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
}

/// Checks MAML (second order), ProtoNet, the hypernetwork, the full
/// contrastive objective through MAML, and every contrastive form/distance
/// pairing. `corrupt` perturbs each analytic gradient as a negative control.
pub fn gradcheck_report(corrupt: bool) -> Result<Vec<GradcheckLine>, String> {
    let sine = TaskDistributionConfig::sinusoid(4, 4);
    let blobs = TaskDistributionConfig::blobs(BlobsConfig { n_way: 3, dim: 4, ..Default::default() }, 2, 2);
    let maml = MamlConfig { hidden: vec![10, 10], inner_steps: 2, order: MamlOrder::Second, ..Default::default() };
    let mut lines = vec![
        learner_line("maml second-order", LearnerConfig::Maml(maml.clone()), sine.clone(), corrupt)?,
        learner_line("maml second-order classification", LearnerConfig::Maml(maml.clone()), blobs.clone(), corrupt)?,
        learner_line("protonet", LearnerConfig::Protonet(ProtoNetConfig { hidden: vec![8], embedding_dim: 5 }), blobs, corrupt)?,
        learner_line(
            "hypernet",
            LearnerConfig::Hypernet(HyperNetConfig { encoder_hidden: vec![8], pooled_dim: 6, decoder_hidden: vec![8, 8] }),
            sine.clone(),
            corrupt,
        )?,
    ];
    let learner = build_learner(&LearnerConfig::Maml(maml), &sine).map_err(|e| e.to_string())?;
    let theta = learner.init_params(&mut stream(0, Purpose::Init, 1)).map_err(|e| e.to_string())?;
    let batch = tasks_for(&sine, 3)?;
    let cfg = ContrastiveConfig { lambda: 0.5, ..Default::default() };
    lines.push(check("contrastive objective through maml second-order", &theta, corrupt, |tape, bound| {
        objective(learner.as_ref(), &cfg, &batch, tape, bound)
    })?);
    for form in [LossForm::Simple, LossForm::InnerOnly, LossForm::OuterOnly, LossForm::Infonce] {
        for distance in [DistanceKind::Cosine, DistanceKind::SigmoidEuclidean, DistanceKind::Euclidean] {
            if distance == DistanceKind::Euclidean && form != LossForm::Infonce {
                continue;
            }
            lines.push(contrastive_line(form, distance, corrupt)?);
        }
    }
    Ok(lines)
}
