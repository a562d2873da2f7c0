//! The contrastive objective in model space.
//!
//! Representations of models trained on subsets of one task are pulled
//! toward the representation trained on the task's full data (`d_in`), and
//! full-data representations of different tasks are pushed apart (`d_out`).
//! Everything here builds on a [`Tape`] so the terms stay differentiable
//! all the way back to the meta-parameters.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{sigmoid, AutodiffError, Tape, Tensor, Var};
use crate::tasks::SubsetStrategy;

#[derive(Debug, Error)]
pub enum ContrastError {
    #[error("cosine distance is undefined for a zero vector")]
    ZeroVector,
    #[error("representation lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 tasks per batch, got {0}")]
    TooFewTasks(usize),
    #[error("inner-task distance needs at least one subset representation")]
    NoSubsets,
    #[error("invalid contrastive config: {0}")]
    Config(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    /// `1 - a·b / (‖a‖‖b‖)`, in `[0, 2]`.
    #[default]
    Cosine,
    /// `sigmoid(‖a - b‖)`, in `[0.5, 1)`.
    SigmoidEuclidean,
    /// `‖a - b‖`, unbounded. Only accepted together with InfoNCE.
    Euclidean,
}

/// Which contrastive term enters the objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossForm {
    /// `d_in - d_out`.
    #[default]
    Simple,
    /// `d_in` only: alignment without discrimination.
    InnerOnly,
    /// `-d_out` only: discrimination without alignment.
    OuterOnly,
    /// Per-task softmax over negated distances with `d_in` as the positive.
    Infonce,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContrastiveConfig {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub strategy: SubsetStrategy,
    #[serde(default)]
    pub distance: DistanceKind,
    #[serde(default)]
    pub loss_form: LossForm,
    /// Treat the full-data representation as a constant inside `d_in`.
    #[serde(default)]
    pub detach_anchor: bool,
}

fn default_lambda() -> f64 {
    0.1
}

fn default_k() -> usize {
    1
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            lambda: default_lambda(),
            k: default_k(),
            strategy: SubsetStrategy::default(),
            distance: DistanceKind::default(),
            loss_form: LossForm::default(),
            detach_anchor: false,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<(), ContrastError> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(ContrastError::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if self.k == 0 {
            return Err(ContrastError::Config("k must be at least 1".into()));
        }
        if self.distance == DistanceKind::Euclidean && self.loss_form != LossForm::Infonce {
            return Err(ContrastError::Config("unbounded euclidean distance is only allowed with infonce".into()));
        }
        Ok(())
    }
}

fn check_lengths(tape: &Tape, a: Var, b: Var) -> Result<(), ContrastError> {
    let (la, lb) = (tape.value(a).numel(), tape.value(b).numel());
    if la != lb {
        return Err(ContrastError::LengthMismatch(la, lb));
    }
    Ok(())
}

/// `φ(a, b)` on the tape.
pub fn distance(tape: &mut Tape, kind: DistanceKind, a: Var, b: Var) -> Result<Var, ContrastError> {
    check_lengths(tape, a, b)?;
    match kind {
        DistanceKind::Cosine => {
            let na = tape.norm(a);
            let nb = tape.norm(b);
            if tape.scalar(na) == 0.0 || tape.scalar(nb) == 0.0 {
                return Err(ContrastError::ZeroVector);
            }
            let prod = tape.mul(a, b)?;
            let dot = tape.sum(prod);
            let denom = tape.mul(na, nb)?;
            let cos = tape.div(dot, denom)?;
            let neg = tape.neg(cos);
            Ok(tape.add_scalar(neg, 1.0))
        }
        DistanceKind::SigmoidEuclidean => {
            let d = tape.sub(a, b)?;
            let n = tape.norm(d);
            Ok(tape.sigmoid(n))
        }
        DistanceKind::Euclidean => {
            let d = tape.sub(a, b)?;
            Ok(tape.norm(d))
        }
    }
}

/// `φ(a, b)` on plain slices, for evaluation.
pub fn distance_value(kind: DistanceKind, a: &[f64], b: &[f64]) -> Result<f64, ContrastError> {
    if a.len() != b.len() {
        return Err(ContrastError::LengthMismatch(a.len(), b.len()));
    }
    let norm = |v: &[f64]| v.iter().fold(0.0, |s, x| s + x * x).sqrt();
    match kind {
        DistanceKind::Cosine => {
            let (na, nb) = (norm(a), norm(b));
            if na == 0.0 || nb == 0.0 {
                return Err(ContrastError::ZeroVector);
            }
            let dot = a.iter().zip(b).fold(0.0, |s, (x, y)| s + x * y);
            Ok(1.0 - dot / (na * nb))
        }
        DistanceKind::SigmoidEuclidean | DistanceKind::Euclidean => {
            let d = a.iter().zip(b).fold(0.0, |s, (x, y)| s + (x - y) * (x - y)).sqrt();
            Ok(if kind == DistanceKind::Euclidean { d } else { sigmoid(d) })
        }
    }
}

fn mean(tape: &mut Tape, terms: &[Var]) -> Result<Var, ContrastError> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(tape.scale(acc, 1.0 / terms.len() as f64))
}

/// `d_in = (1/K) Σ_k φ(e^{κ_k}, e*)`.
pub fn inner_task_distance(tape: &mut Tape, kind: DistanceKind, subsets: &[Var], anchor: Var) -> Result<Var, ContrastError> {
    if subsets.is_empty() {
        return Err(ContrastError::NoSubsets);
    }
    let ds = subsets
        .iter()
        .map(|&e| distance(tape, kind, e, anchor))
        .collect::<Result<Vec<_>, _>>()?;
    mean(tape, &ds)
}

/// Representations stacked into a `[B, d]` matrix.
fn stack(tape: &mut Tape, reprs: &[Var]) -> Result<Var, ContrastError> {
    let d = tape.value(reprs[0]).numel();
    let mut rows = Vec::with_capacity(reprs.len());
    for &r in reprs {
        check_lengths(tape, reprs[0], r)?;
        rows.push(tape.flatten(r)?);
    }
    let flat = tape.concat(&rows)?;
    Ok(tape.reshape(flat, &[reprs.len(), d])?)
}

/// `[B, B]` matrix of pairwise distances, exactly symmetric.
///
/// Cosine goes through one Gram matrix of row-normalized representations.
/// The other kinds evaluate each unordered pair once and place it at both
/// positions. Diagonal entries carry no meaning and are masked by callers.
pub fn pairwise_distances(tape: &mut Tape, kind: DistanceKind, reprs: &[Var]) -> Result<Var, ContrastError> {
    let b = reprs.len();
    if b == 0 {
        return Err(ContrastError::TooFewTasks(0));
    }
    if kind == DistanceKind::Cosine {
        let x = stack(tape, reprs)?;
        let d = tape.shape(x)[1];
        let sq = tape.square(x);
        let ones_col = tape.leaf(Tensor::filled(&[d, 1], 1.0));
        let sq_norms = tape.matmul(sq, ones_col)?;
        if tape.value(sq_norms).data().iter().any(|&v| v == 0.0) {
            return Err(ContrastError::ZeroVector);
        }
        let norms = tape.sqrt(sq_norms);
        let ones_row = tape.leaf(Tensor::filled(&[1, d], 1.0));
        let spread = tape.matmul(norms, ones_row)?;
        let unit = tape.div(x, spread)?;
        let unit_t = tape.transpose(unit)?;
        let gram = tape.matmul(unit, unit_t)?;
        let neg = tape.neg(gram);
        return Ok(tape.add_scalar(neg, 1.0));
    }
    let mut entries = vec![None; b * b];
    for i in 0..b {
        for j in i + 1..b {
            let d = distance(tape, kind, reprs[i], reprs[j])?;
            let d = tape.reshape(d, &[1])?;
            entries[i * b + j] = Some(d);
            entries[j * b + i] = Some(d);
        }
    }
    let zero = tape.leaf(Tensor::zeros(&[1]));
    let parts: Vec<Var> = entries.into_iter().map(|e| e.unwrap_or(zero)).collect();
    let flat = tape.concat(&parts)?;
    Ok(tape.reshape(flat, &[b, b])?)
}

fn off_diagonal_mask(b: usize) -> Tensor {
    let mut m = Tensor::filled(&[b, b], 1.0);
    for i in 0..b {
        m.data_mut()[i * b + i] = 0.0;
    }
    m
}

fn check_square(tape: &Tape, matrix: Var) -> Result<usize, ContrastError> {
    let shape = tape.shape(matrix);
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(AutodiffError::Rank { op: "pairwise matrix", expected: 2, shape: shape.to_vec() }.into());
    }
    if shape[0] < 2 {
        return Err(ContrastError::TooFewTasks(shape[0]));
    }
    Ok(shape[0])
}

/// `d_out` as the mean over all `B(B-1)` off-diagonal entries of a pairwise matrix.
pub fn inter_task_from_matrix(tape: &mut Tape, matrix: Var) -> Result<Var, ContrastError> {
    let b = check_square(tape, matrix)?;
    let mask = tape.leaf(off_diagonal_mask(b));
    let off = tape.mul(matrix, mask)?;
    let total = tape.sum(off);
    Ok(tape.scale(total, 1.0 / (b * (b - 1)) as f64))
}

/// `d_out = (1/(B(B-1))) Σ_τ Σ_{τ'≠τ} φ(e*_τ, e*_τ')`.
pub fn inter_task_distance(tape: &mut Tape, kind: DistanceKind, reprs: &[Var]) -> Result<Var, ContrastError> {
    if reprs.len() < 2 {
        return Err(ContrastError::TooFewTasks(reprs.len()));
    }
    let m = pairwise_distances(tape, kind, reprs)?;
    inter_task_from_matrix(tape, m)
}

/// `d_in - d_out`.
pub fn simple_contrastive(tape: &mut Tape, d_in: Var, d_out: Var) -> Result<Var, ContrastError> {
    Ok(tape.sub(d_in, d_out)?)
}

/// `Σ_τ -log(exp(-d_in_τ) / (exp(-d_in_τ) + Σ_{τ'≠τ} exp(-D_ττ')))`.
///
/// The positive distance takes the diagonal slot of each row. Rows are
/// shifted by their largest logit before exponentiation; the shift is a
/// constant and cancels exactly in value and gradient.
pub fn infonce_loss(tape: &mut Tape, d_in: &[Var], d_out: Var) -> Result<Var, ContrastError> {
    let b = check_square(tape, d_out)?;
    if d_in.len() != b {
        return Err(ContrastError::LengthMismatch(d_in.len(), b));
    }
    let positives: Vec<Var> = d_in.iter().map(|&d| tape.reshape(d, &[1])).collect::<Result<_, _>>()?;
    let positives = tape.concat(&positives)?;
    let positives = tape.reshape(positives, &[b, 1])?;
    let ones_row = tape.leaf(Tensor::filled(&[1, b], 1.0));
    let spread = tape.matmul(positives, ones_row)?;
    let mut eye = Tensor::zeros(&[b, b]);
    for i in 0..b {
        eye.data_mut()[i * b + i] = 1.0;
    }
    let eye = tape.leaf(eye);
    let mask = tape.leaf(off_diagonal_mask(b));
    let diag = tape.mul(spread, eye)?;
    let off = tape.mul(d_out, mask)?;
    let dist = tape.add(off, diag)?;
    let logits = tape.neg(dist);

    let values = tape.value(logits);
    let mut shift = Vec::with_capacity(b * b);
    let mut row_max = Vec::with_capacity(b);
    for i in 0..b {
        let m = values.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        shift.extend(std::iter::repeat(m).take(b));
        row_max.push(m);
    }
    let shift = tape.leaf(Tensor::new(vec![b, b], shift)?);
    let z = tape.sub(logits, shift)?;
    let ez = tape.exp(z);
    let ones_col = tape.leaf(Tensor::filled(&[b, 1], 1.0));
    let sums = tape.matmul(ez, ones_col)?;
    let logs = tape.log(sums);
    let row_max = tape.leaf(Tensor::new(vec![b, 1], row_max)?);
    let lse = tape.add(logs, row_max)?;
    let per_task = tape.add(lse, positives)?;
    Ok(tape.sum(per_task))
}

/// `L_v + λ · contrastive`.
pub fn combined_loss(tape: &mut Tape, l_v: Var, contrastive: Var, lambda: f64) -> Result<Var, ContrastError> {
    let weighted = tape.scale(contrastive, lambda);
    Ok(tape.add(l_v, weighted)?)
}

/// Batch-level terms of one episode.
#[derive(Clone, Copy, Debug)]
pub struct ContrastiveTerms {
    /// Mean over tasks of the per-task inner distance.
    pub d_in: Var,
    pub d_out: Var,
    /// The term multiplied by `λ`, per the configured loss form.
    pub loss: Var,
}

/// Builds every contrastive term for a batch.
///
/// `subsets[τ]` holds the `K` subset representations of task `τ` and
/// `anchors[τ]` its full-data representation.
pub fn contrastive_terms(
    tape: &mut Tape,
    cfg: &ContrastiveConfig,
    subsets: &[Vec<Var>],
    anchors: &[Var],
) -> Result<ContrastiveTerms, ContrastError> {
    let b = anchors.len();
    if b < 2 {
        return Err(ContrastError::TooFewTasks(b));
    }
    if subsets.len() != b {
        return Err(ContrastError::LengthMismatch(subsets.len(), b));
    }
    let mut per_task = Vec::with_capacity(b);
    for (subs, &anchor) in subsets.iter().zip(anchors) {
        let anchor = if cfg.detach_anchor { tape.detach(anchor) } else { anchor };
        per_task.push(inner_task_distance(tape, cfg.distance, subs, anchor)?);
    }
    let d_in = mean(tape, &per_task)?;
    let matrix = pairwise_distances(tape, cfg.distance, anchors)?;
    let d_out = inter_task_from_matrix(tape, matrix)?;
    let loss = match cfg.loss_form {
        LossForm::Simple => simple_contrastive(tape, d_in, d_out)?,
        LossForm::InnerOnly => d_in,
        LossForm::OuterOnly => tape.neg(d_out),
        LossForm::Infonce => infonce_loss(tape, &per_task, matrix)?,
    };
    Ok(ContrastiveTerms { d_in, d_out, loss })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check, ParamVector, Tensor, DEFAULT_EPS};
    use proptest::prelude::*;

    const ALL: [DistanceKind; 3] = [DistanceKind::Cosine, DistanceKind::SigmoidEuclidean, DistanceKind::Euclidean];

    fn vars(tape: &mut Tape, vs: &[Vec<f64>]) -> Vec<Var> {
        vs.iter().map(|v| tape.leaf(Tensor::vector(v.clone()))).collect()
    }

    fn d(kind: DistanceKind, a: &[f64], b: &[f64]) -> f64 {
        let mut tape = Tape::new();
        let v = vars(&mut tape, &[a.to_vec(), b.to_vec()]);
        let out = distance(&mut tape, kind, v[0], v[1]).unwrap();
        tape.scalar(out)
    }

    #[test]
    fn distance_examples() {
        let c = DistanceKind::Cosine;
        assert_eq!(d(c, &[1.0, 0.0], &[1.0, 0.0]), 0.0);
        assert_eq!(d(c, &[1.0, 0.0], &[0.0, 1.0]), 1.0);
        assert_eq!(d(c, &[1.0, 0.0], &[-1.0, 0.0]), 2.0);
        assert_eq!(d(DistanceKind::SigmoidEuclidean, &[3.0, 1.0], &[3.0, 1.0]), 0.5);
        assert_eq!(d(DistanceKind::Euclidean, &[0.0, 0.0], &[3.0, 4.0]), 5.0);
    }

    #[test]
    fn cosine_zero_vector_rejected() {
        let mut tape = Tape::new();
        let v = vars(&mut tape, &[vec![0.0, 0.0], vec![1.0, 0.0]]);
        assert!(matches!(distance(&mut tape, DistanceKind::Cosine, v[0], v[1]), Err(ContrastError::ZeroVector)));
        assert!(matches!(
            distance_value(DistanceKind::Cosine, &[1.0], &[0.0]),
            Err(ContrastError::ZeroVector)
        ));
    }

    #[test]
    fn length_mismatch_rejected() {
        let mut tape = Tape::new();
        let v = vars(&mut tape, &[vec![1.0, 0.0], vec![1.0]]);
        assert!(matches!(
            distance(&mut tape, DistanceKind::Euclidean, v[0], v[1]),
            Err(ContrastError::LengthMismatch(2, 1))
        ));
    }

    proptest! {
        #[test]
        fn symmetric_and_matches_plain(a in prop::collection::vec(-5.0f64..5.0, 4), b in prop::collection::vec(-5.0f64..5.0, 4)) {
            prop_assume!(a.iter().any(|x| x.abs() > 1e-3) && b.iter().any(|x| x.abs() > 1e-3));
            for kind in ALL {
                let ab = d(kind, &a, &b);
                prop_assert!((ab - d(kind, &b, &a)).abs() <= 1e-12);
                prop_assert!((ab - distance_value(kind, &a, &b).unwrap()).abs() <= 1e-12);
            }
        }

        #[test]
        fn cosine_scale_invariant(a in prop::collection::vec(0.1f64..5.0, 5), b in prop::collection::vec(-5.0f64..5.0, 5), c in 0.01f64..100.0) {
            prop_assume!(b.iter().any(|x| x.abs() > 1e-3));
            let cb: Vec<f64> = b.iter().map(|x| x * c).collect();
            let lhs = d(DistanceKind::Cosine, &a, &cb);
            prop_assert!((lhs - d(DistanceKind::Cosine, &a, &b)).abs() <= 1e-12);
            prop_assert!((0.0..=2.0).contains(&lhs));
        }
    }

    #[test]
    fn inner_distance_mean() {
        let mut tape = Tape::new();
        let v = vars(&mut tape, &[vec![1.0, 0.0]]);
        let one = inner_task_distance(&mut tape, DistanceKind::Cosine, &[v[0]], v[0]).unwrap();
        assert_eq!(tape.scalar(one), 0.0);
        // cos distances 0 and 1 from the anchor average to 0.5
        let w = vars(&mut tape, &[vec![2.0, 0.0], vec![0.0, 3.0]]);
        let two = inner_task_distance(&mut tape, DistanceKind::Cosine, &w, v[0]).unwrap();
        assert_eq!(tape.scalar(two), 0.5);
        assert!(matches!(
            inner_task_distance(&mut tape, DistanceKind::Cosine, &[], v[0]),
            Err(ContrastError::NoSubsets)
        ));
    }

    #[test]
    fn inter_distance_examples() {
        let mut tape = Tape::new();
        let v = vars(&mut tape, &[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
        let two = inter_task_distance(&mut tape, DistanceKind::Cosine, &v[..2]).unwrap();
        assert_eq!(tape.scalar(two), 1.0);
        let three = inter_task_distance(&mut tape, DistanceKind::Cosine, &v).unwrap();
        assert_eq!(tape.scalar(three), 1.0);
        let same = vars(&mut tape, &[vec![1.0, 2.0], vec![1.0, 2.0], vec![2.0, 4.0]]);
        let zero = inter_task_distance(&mut tape, DistanceKind::Cosine, &same).unwrap();
        assert!(tape.scalar(zero).abs() < 1e-15);
        assert!(matches!(
            inter_task_distance(&mut tape, DistanceKind::Cosine, &v[..1]),
            Err(ContrastError::TooFewTasks(1))
        ));
    }

    fn sample_vectors(b: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        use rand::Rng as _;
        let mut rng = crate::rng::stream(seed, crate::rng::Purpose::Misc, 0);
        (0..b).map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect()
    }

    #[test]
    fn aggregations_match_brute_force_double_sums() {
        for kind in ALL {
            for b in 2..=8 {
                let vs = sample_vectors(b, 6, b as u64);
                let subs = sample_vectors(3, 6, 100 + b as u64);
                let mut expect_out = 0.0;
                for i in 0..b {
                    for j in 0..b {
                        if i != j {
                            expect_out += distance_value(kind, &vs[i], &vs[j]).unwrap();
                        }
                    }
                }
                expect_out /= (b * (b - 1)) as f64;
                let expect_in = subs.iter().map(|s| distance_value(kind, s, &vs[0]).unwrap()).sum::<f64>() / 3.0;

                let mut tape = Tape::new();
                let v = vars(&mut tape, &vs);
                let s = vars(&mut tape, &subs);
                let out = inter_task_distance(&mut tape, kind, &v).unwrap();
                let inn = inner_task_distance(&mut tape, kind, &s, v[0]).unwrap();
                assert!((tape.scalar(out) - expect_out).abs() <= 1e-12);
                assert!((tape.scalar(inn) - expect_in).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn simple_and_combined_arithmetic() {
        let mut tape = Tape::new();
        let (a, b, lv) = (tape.constant(0.3), tape.constant(0.5), tape.constant(1.0));
        let s = simple_contrastive(&mut tape, a, b).unwrap();
        assert!((tape.scalar(s) + 0.2).abs() < 1e-15);
        let z = tape.constant(0.0);
        let zz = simple_contrastive(&mut tape, z, z).unwrap();
        assert_eq!(tape.scalar(zz), 0.0);
        let l = combined_loss(&mut tape, lv, s, 0.1).unwrap();
        assert!((tape.scalar(l) - 0.98).abs() < 1e-15);
        let l0 = combined_loss(&mut tape, lv, s, 0.0).unwrap();
        assert_eq!(tape.scalar(l0), 1.0);
    }

    #[test]
    fn gradient_descent_on_simple_term_aligns_and_separates() {
        // Two tasks in 2-D: subset reps and anchors are free parameters.
        let mut x = vec![vec![1.0, 0.2], vec![0.8, 0.6], vec![0.3, 1.0], vec![0.7, 0.9]];
        let eval = |x: &[Vec<f64>]| {
            let mut tape = Tape::new();
            let v = vars(&mut tape, x);
            let cfg = ContrastiveConfig::default();
            let t = contrastive_terms(&mut tape, &cfg, &[vec![v[0]], vec![v[2]]], &[v[1], v[3]]).unwrap();
            let (din, dout) = (tape.scalar(t.d_in), tape.scalar(t.d_out));
            let g = tape.grad_values(t.loss, &v).unwrap();
            (din, dout, g)
        };
        let (din0, dout0, _) = eval(&x);
        for _ in 0..500 {
            let (_, _, g) = eval(&x);
            for (xi, gi) in x.iter_mut().zip(&g) {
                for (a, b) in xi.iter_mut().zip(gi.data()) {
                    *a -= 0.05 * b;
                }
            }
        }
        let (din1, dout1, _) = eval(&x);
        assert!(din1 < din0 && dout1 > dout0, "{din0}->{din1}, {dout0}->{dout1}");
    }

    /// Direct evaluation with no shift, in the textbook form.
    fn infonce_oracle(din: &[f64], dout: &[Vec<f64>]) -> f64 {
        let b = din.len();
        (0..b)
            .map(|t| {
                let pos = (-din[t]).exp();
                let neg: f64 = (0..b).filter(|&j| j != t).map(|j| (-dout[t][j]).exp()).sum();
                -(pos / (pos + neg)).ln()
            })
            .sum()
    }

    fn infonce_values(din: &[f64], dout: &[Vec<f64>]) -> f64 {
        let b = din.len();
        let mut tape = Tape::new();
        let di: Vec<Var> = din.iter().map(|&v| tape.constant(v)).collect();
        // diagonal entries must be ignored, so fill them with garbage
        let flat: Vec<f64> = (0..b)
            .flat_map(|i| (0..b).map(move |j| if i == j { 1e3 } else { dout[i][j] }))
            .collect();
        let m = tape.leaf(Tensor::new(vec![b, b], flat).unwrap());
        let l = infonce_loss(&mut tape, &di, m).unwrap();
        tape.scalar(l)
    }

    #[test]
    fn infonce_examples_and_oracle() {
        let dd = vec![vec![0.7; 2]; 2];
        assert!((infonce_values(&[0.7, 0.7], &dd) - 2.0 * 2f64.ln()).abs() < 1e-12);
        let far = vec![vec![1e4; 3]; 3];
        assert!(infonce_values(&[0.0; 3], &far) < 1e-12);
        // large distances would underflow without the row shift
        let huge = infonce_values(&[800.0, 801.0], &[vec![0.0, 800.5], vec![802.0, 0.0]]);
        assert!(huge.is_finite() && huge > 0.0);

        for b in 2..=8 {
            let vs = sample_vectors(b, 5, 7 + b as u64);
            let subs = sample_vectors(b, 5, 70 + b as u64);
            for kind in ALL {
                let din: Vec<f64> = (0..b).map(|t| distance_value(kind, &subs[t], &vs[t]).unwrap()).collect();
                let dout: Vec<Vec<f64>> = (0..b)
                    .map(|i| (0..b).map(|j| distance_value(kind, &vs[i], &vs[j]).unwrap()).collect())
                    .collect();
                let got = infonce_values(&din, &dout);
                assert!((got - infonce_oracle(&din, &dout)).abs() <= 1e-9);
            }
        }
    }

    fn reprs_as_params(b: usize, seed: u64) -> ParamVector {
        let mut entries = Vec::new();
        for (i, v) in sample_vectors(2 * b, 4, seed).into_iter().enumerate() {
            entries.push((format!("r{i}"), Tensor::vector(v)));
        }
        ParamVector::from_entries(entries).unwrap()
    }

    #[test]
    fn every_form_and_distance_matches_finite_differences() {
        let b = 3;
        let pv = reprs_as_params(b, 5);
        for kind in ALL {
            for form in [LossForm::Simple, LossForm::InnerOnly, LossForm::OuterOnly, LossForm::Infonce] {
                {
                    let cfg = ContrastiveConfig { distance: kind, loss_form: form, ..Default::default() };
                    if cfg.validate().is_err() {
                        continue;
                    }
                    let err = finite_diff_check::<_, ContrastError>(
                        |tape, p| {
                            let subs: Vec<Vec<Var>> = (0..b).map(|t| vec![p.vars[t]]).collect();
                            Ok(contrastive_terms(tape, &cfg, &subs, &p.vars[b..])?.loss)
                        },
                        &pv,
                        DEFAULT_EPS,
                    )
                    .unwrap();
                    assert!(err <= 1e-6, "{kind:?} {form:?}: {err}");
                }
            }
        }
    }

    #[test]
    fn inner_term_has_no_cross_task_gradient() {
        let b = 3;
        let pv = reprs_as_params(b, 9);
        let mut tape = Tape::new();
        let p = pv.bind(&mut tape);
        let anchors = &p.vars[b..];
        for t in 0..b {
            let d = inner_task_distance(&mut tape, DistanceKind::Cosine, &[p.vars[t]], anchors[t]).unwrap();
            let g = tape.grad_values(d, anchors).unwrap();
            for (other, gt) in g.iter().enumerate() {
                if other != t {
                    assert!(gt.data().iter().all(|&x| x == 0.0));
                } else {
                    assert!(gt.data().iter().any(|&x| x != 0.0));
                }
            }
        }
    }

    #[test]
    fn detached_anchor_only_receives_outer_gradient() {
        let b = 2;
        let pv = reprs_as_params(b, 3);
        let cfg = ContrastiveConfig { loss_form: LossForm::InnerOnly, detach_anchor: true, ..Default::default() };
        let mut tape = Tape::new();
        let p = pv.bind(&mut tape);
        let subs: Vec<Vec<Var>> = (0..b).map(|t| vec![p.vars[t]]).collect();
        let t = contrastive_terms(&mut tape, &cfg, &subs, &p.vars[b..]).unwrap();
        let g = tape.grad_values(t.loss, &p.vars).unwrap();
        assert!(g[..b].iter().all(|g| g.data().iter().any(|&x| x != 0.0)));
        assert!(g[b..].iter().all(|g| g.data().iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn config_validation() {
        assert!(ContrastiveConfig::default().validate().is_ok());
        let bad = |f: fn(&mut ContrastiveConfig)| {
            let mut c = ContrastiveConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.lambda = -0.1));
        assert!(bad(|c| c.lambda = f64::NAN));
        assert!(bad(|c| c.k = 0));
        assert!(bad(|c| c.distance = DistanceKind::Euclidean));
        let ok = ContrastiveConfig { distance: DistanceKind::Euclidean, loss_form: LossForm::Infonce, ..Default::default() };
        assert!(ok.validate().is_ok());
    }
}
