//! One episode: forward passes per task, batch-level contrastive terms and
//! the meta-gradient.
//!
//! Every task gets its own tape. Cross-task terms only depend on the tasks'
//! representation vectors, so they are evaluated on a small separate tape
//! whose gradients with respect to those vectors are then pulled back
//! through each task tape. Per-task work can run on several threads; the
//! reduction over tasks is always in task-index order.

use crate::autodiff::{BoundParams, ParamVector, Tape, Tensor, Var};
use crate::contrastive::{combined_loss, contrastive_terms, ContrastiveConfig};
use crate::learners::{episodic_loss_for, AdaptMode, MetaLearner};
use crate::tasks::{Dataset, TaskInstance};

use super::TrainError;

/// Result of one episode.
#[derive(Clone, Debug)]
pub struct EpisodeOutput {
    /// The optimized objective `L_v + λ · term` (just `L_v` for the baseline).
    pub loss: f64,
    pub l_v: f64,
    pub d_in: Option<f64>,
    pub d_out: Option<f64>,
    /// The contrastive term before weighting.
    pub l_c: Option<f64>,
    /// Flattened gradient, or the interpolation pseudo-gradient for Reptile.
    pub grad: Vec<f64>,
    /// Calls to `adapt` summed over the batch.
    pub adapt_calls: usize,
    /// Sum of peak tape sizes, in bytes.
    pub peak_bytes: usize,
}

struct TaskPass {
    tape: Tape,
    bound: BoundParams,
    l_v: Var,
    /// `θ'` for interpolating learners.
    adapted: Option<Vec<f64>>,
    subsets: Vec<Var>,
    anchor: Option<Var>,
    adapt_calls: usize,
}

/// Order-preserving map over `items` on up to `jobs` threads.
pub(crate) fn par_map<T, R, F>(items: Vec<T>, jobs: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync,
{
    if jobs <= 1 || items.len() <= 1 {
        return items.into_iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    let mut chunks: Vec<Vec<T>> = Vec::new();
    let mut it = items.into_iter().peekable();
    while it.peek().is_some() {
        chunks.push(it.by_ref().take(chunk).collect());
    }
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = chunks
            .into_iter()
            .map(|c| s.spawn(move || c.into_iter().map(f).collect::<Vec<R>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker thread panicked"))
            .collect()
    })
}

fn forward_task(
    learner: &dyn MetaLearner,
    theta: &ParamVector,
    task: &TaskInstance,
    contrast: Option<(&ContrastiveConfig, &[Dataset])>,
) -> Result<TaskPass, TrainError> {
    let mut tape = Tape::new();
    let bound = theta.bind(&mut tape);
    let model = learner.adapt(&mut tape, &bound, &task.train, AdaptMode::Meta)?;
    let mut adapt_calls = 1;
    let l_v = episodic_loss_for(learner, &mut tape, &model, task)?;
    let adapted = if learner.interpolates() {
        let e = learner.represent(&mut tape, &model)?;
        Some(tape.value(e).data().to_vec())
    } else {
        None
    };
    let mut subsets = Vec::new();
    let mut anchor = None;
    if let Some((cfg, sets)) = contrast {
        // With the train-only strategy the first subset is exactly D_tr,
        // whose model is already on the tape.
        let reuse = cfg.strategy.is_train_only();
        for (k, set) in sets.iter().enumerate() {
            let sub_model = if reuse && k == 0 {
                model.clone()
            } else {
                adapt_calls += 1;
                learner.adapt(&mut tape, &bound, set, AdaptMode::Meta)?
            };
            subsets.push(learner.represent(&mut tape, &sub_model)?);
        }
        let pooled = learner.adapt(&mut tape, &bound, &task.pool(), AdaptMode::Meta)?;
        adapt_calls += 1;
        anchor = Some(learner.represent(&mut tape, &pooled)?);
    }
    Ok(TaskPass { tape, bound, l_v, adapted, subsets, anchor, adapt_calls })
}

/// Pulls `upstream` back to `θ` through one task tape.
fn backward_task(pass: &mut TaskPass, lv_weight: Option<f64>, upstream: &[(Var, Tensor)]) -> Result<Vec<f64>, TrainError> {
    let tape = &mut pass.tape;
    let mut objective = lv_weight.map(|w| tape.scale(pass.l_v, w));
    for (var, g) in upstream {
        let g = tape.leaf(g.clone());
        let prod = tape.mul(*var, g)?;
        let dot = tape.sum(prod);
        objective = Some(match objective {
            None => dot,
            Some(acc) => tape.add(acc, dot)?,
        });
    }
    let Some(objective) = objective else {
        return Ok(Vec::new());
    };
    let grads = tape.grad_values(objective, &pass.bound.vars)?;
    Ok(grads.into_iter().flat_map(Tensor::into_data).collect())
}

/// Algorithm-1 episode: mean validation loss over the batch and its gradient.
pub fn run_episode_baseline(
    learner: &dyn MetaLearner,
    theta: &ParamVector,
    batch: &[TaskInstance],
    jobs: usize,
) -> Result<EpisodeOutput, TrainError> {
    run_episode(learner, theta, batch, None, jobs)
}

/// Contrastive episode. `subsets[τ]` holds the `K` subsets of task `τ`.
pub fn run_episode_conml(
    learner: &dyn MetaLearner,
    theta: &ParamVector,
    batch: &[TaskInstance],
    subsets: &[Vec<Dataset>],
    cfg: &ContrastiveConfig,
    jobs: usize,
) -> Result<EpisodeOutput, TrainError> {
    cfg.validate()?;
    if batch.len() < 2 {
        return Err(TrainError::Config(format!(
            "contrastive episodes need at least 2 tasks, got {}",
            batch.len()
        )));
    }
    if subsets.len() != batch.len() || subsets.iter().any(|s| s.len() != cfg.k) {
        return Err(TrainError::Config(format!("expected {} subsets for each of {} tasks", cfg.k, batch.len())));
    }
    run_episode(learner, theta, batch, Some((cfg, subsets)), jobs)
}

fn run_episode(
    learner: &dyn MetaLearner,
    theta: &ParamVector,
    batch: &[TaskInstance],
    contrast: Option<(&ContrastiveConfig, &[Vec<Dataset>])>,
    jobs: usize,
) -> Result<EpisodeOutput, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::Config("an episode needs at least one task".into()));
    }
    let b = batch.len();
    let inputs: Vec<usize> = (0..b).collect();
    let passes = par_map(inputs, jobs, |t| {
        forward_task(learner, theta, &batch[t], contrast.map(|(c, s)| (c, s[t].as_slice())))
    });
    let mut passes = passes.into_iter().collect::<Result<Vec<_>, _>>()?;

    let l_v = passes.iter().map(|p| p.tape.scalar(p.l_v)).sum::<f64>() / b as f64;
    let adapt_calls = passes.iter().map(|p| p.adapt_calls).sum();

    // Batch-level contrastive terms on their own tape, with representations as leaves.
    let mut upstream: Vec<Vec<(Var, Tensor)>> = vec![Vec::new(); b];
    let mut diag = (None, None, None);
    let mut loss = l_v;
    let mut extra_bytes = 0;
    if let Some((cfg, _)) = contrast {
        let mut tape = Tape::new();
        let mut sub_leaves = Vec::with_capacity(b);
        let mut anchor_leaves = Vec::with_capacity(b);
        for p in &passes {
            sub_leaves.push(p.subsets.iter().map(|&v| tape.leaf(p.tape.value(v).clone())).collect::<Vec<_>>());
            anchor_leaves.push(tape.leaf(p.tape.value(p.anchor.expect("contrastive pass")).clone()));
        }
        let terms = contrastive_terms(&mut tape, cfg, &sub_leaves, &anchor_leaves)?;
        let lv_leaf = tape.constant(l_v);
        let total = combined_loss(&mut tape, lv_leaf, terms.loss, cfg.lambda)?;
        loss = tape.scalar(total);
        diag = (Some(tape.scalar(terms.d_in)), Some(tape.scalar(terms.d_out)), Some(tape.scalar(terms.loss)));
        let leaves: Vec<Var> = sub_leaves.iter().flatten().chain(&anchor_leaves).copied().collect();
        let grads = tape.grad_values(total, &leaves)?;
        let mut grads = grads.into_iter();
        for (t, p) in passes.iter().enumerate() {
            for &v in &p.subsets {
                upstream[t].push((v, grads.next().expect("one gradient per leaf")));
            }
        }
        for (t, p) in passes.iter().enumerate() {
            upstream[t].push((p.anchor.expect("contrastive pass"), grads.next().expect("one gradient per leaf")));
        }
        extra_bytes = tape.peak_bytes();
    }

    let interpolates = learner.interpolates();
    let lv_weight = (!interpolates).then_some(1.0 / b as f64);
    let work: Vec<(&mut TaskPass, Vec<(Var, Tensor)>)> = passes.iter_mut().zip(upstream).collect();
    let task_grads = par_map(work, jobs, |(p, up)| backward_task(p, lv_weight, &up));

    let n = theta.numel();
    let mut grad = vec![0.0; n];
    for g in task_grads {
        let g = g?;
        if !g.is_empty() {
            for (acc, x) in grad.iter_mut().zip(&g) {
                *acc += x;
            }
        }
    }
    if interpolates {
        let flat = theta.flatten();
        for p in &passes {
            let adapted = p.adapted.as_ref().expect("interpolating learner records θ'");
            for ((acc, t), a) in grad.iter_mut().zip(&flat).zip(adapted) {
                *acc += (t - a) / b as f64;
            }
        }
    }
    let peak_bytes = passes.iter().map(|p| p.tape.peak_bytes()).sum::<usize>() + extra_bytes;
    Ok(EpisodeOutput {
        loss,
        l_v,
        d_in: diag.0,
        d_out: diag.1,
        l_c: diag.2,
        grad,
        adapt_calls,
        peak_bytes,
    })
}
