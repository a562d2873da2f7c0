//! Define-by-run Wengert tape with differentiable backward passes.
//!
//! Every backward rule is itself expressed with tape ops, so gradients
//! produced with `create_graph` can be differentiated again. When the caller
//! does not need higher-order terms the nodes created during the backward
//! sweep are truncated away and the gradients come back as constant leaves.

use super::tensor::{is_trailing_suffix, Tensor};
use super::AutodiffError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Below this, the norm in a `norm` backward is replaced by this constant.
pub const NORM_GRAD_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Relu(usize),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    Sqrt(usize),
    Norm(usize),
    Sum(usize),
    BroadcastTo(usize),
    SumTo(usize),
    Reshape(usize),
    Concat(Vec<usize>),
    Slice { src: usize, start: usize },
}

impl Op {
    fn parents(&self) -> Vec<usize> {
        match *self {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::MatMul(a, b) => {
                vec![a, b]
            }
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Transpose(a)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Square(a)
            | Op::Sqrt(a)
            | Op::Norm(a)
            | Op::Sum(a)
            | Op::BroadcastTo(a)
            | Op::SumTo(a)
            | Op::Reshape(a)
            | Op::Slice { src: a, .. } => vec![a],
            Op::Concat(ref parts) => parts.clone(),
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only operation record. One tape per episode; never shared.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bytes: usize,
    peak_bytes: usize,
}

type OpResult = Result<Var, AutodiffError>;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Bytes currently held by node values.
    pub fn bytes(&self) -> usize {
        self.bytes
    }

    /// High-water mark of [`Tape::bytes`].
    pub fn peak_bytes(&self) -> usize {
        self.peak_bytes
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.bytes += value.numel() * std::mem::size_of::<f64>();
        self.peak_bytes = self.peak_bytes.max(self.bytes);
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn truncate(&mut self, len: usize) {
        for node in self.nodes.drain(len..) {
            self.bytes -= node.value.numel() * std::mem::size_of::<f64>();
        }
    }

    /// Records a leaf (parameter or constant).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: f64) -> Var {
        self.leaf(Tensor::scalar(value))
    }

    /// A leaf copy of `v`; gradients do not flow through it.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.leaf(value)
    }

    fn v(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn align(&mut self, op: &'static str, a: Var, b: Var) -> Result<(Var, Var), AutodiffError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa == sb {
            Ok((a, b))
        } else if is_trailing_suffix(&sa, &sb) {
            Ok((self.broadcast_to(a, &sb)?, b))
        } else if is_trailing_suffix(&sb, &sa) {
            Ok((a, self.broadcast_to(b, &sa)?))
        } else {
            Err(AutodiffError::ShapeMismatch {
                op,
                left: sa,
                right: sb,
            })
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> OpResult {
        let (a, b) = self.align("add", a, b)?;
        let value = self.v(a).zip(self.v(b), |x, y| x + y);
        Ok(self.push(value, Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> OpResult {
        let (a, b) = self.align("sub", a, b)?;
        let value = self.v(a).zip(self.v(b), |x, y| x - y);
        Ok(self.push(value, Op::Sub(a.0, b.0)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> OpResult {
        let (a, b) = self.align("mul", a, b)?;
        let value = self.v(a).zip(self.v(b), |x, y| x * y);
        Ok(self.push(value, Op::Mul(a.0, b.0)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> OpResult {
        let (a, b) = self.align("div", a, b)?;
        let value = self.v(a).zip(self.v(b), |x, y| x / y);
        Ok(self.push(value, Op::Div(a.0, b.0)))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let value = self.v(a).map(|x| -x);
        self.push(value, Op::Neg(a.0))
    }

    /// Multiplies by a fixed constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.v(a).map(|x| c * x);
        self.push(value, Op::Scale(a.0, c))
    }

    /// Adds a fixed constant.
    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.v(a).map(|x| x + c);
        self.push(value, Op::AddScalar(a.0))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> OpResult {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let value = self.v(a).matmul(self.v(b));
        Ok(self.push(value, Op::MatMul(a.0, b.0)))
    }

    pub fn transpose(&mut self, a: Var) -> OpResult {
        if self.shape(a).len() != 2 {
            return Err(AutodiffError::Rank {
                op: "transpose",
                expected: 2,
                shape: self.shape(a).to_vec(),
            });
        }
        let value = self.v(a).transpose();
        Ok(self.push(value, Op::Transpose(a.0)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.v(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(value, Op::Relu(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.v(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.v(a).map(f64::exp);
        self.push(value, Op::Exp(a.0))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.v(a).map(f64::ln);
        self.push(value, Op::Log(a.0))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.v(a).map(|x| x * x);
        self.push(value, Op::Square(a.0))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.v(a).map(f64::sqrt);
        self.push(value, Op::Sqrt(a.0))
    }

    /// Euclidean norm of all elements, as a scalar.
    pub fn norm(&mut self, a: Var) -> Var {
        let ss = self.v(a).data().iter().fold(0.0, |acc, &x| acc + x * x);
        self.push(Tensor::scalar(ss.sqrt()), Op::Norm(a.0))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.v(a).sum());
        self.push(value, Op::Sum(a.0))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.v(a).numel().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Mean of squared differences.
    pub fn mse(&mut self, pred: Var, target: Var) -> OpResult {
        let d = self.sub(pred, target)?;
        let sq = self.square(d);
        Ok(self.mean(sq))
    }

    /// Repeats `a` over new leading axes; `a`'s shape must be a suffix of `shape`.
    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> OpResult {
        let sa = self.shape(a);
        if sa == shape {
            return Ok(a);
        }
        if !is_trailing_suffix(sa, shape) {
            return Err(AutodiffError::ShapeMismatch {
                op: "broadcast",
                left: sa.to_vec(),
                right: shape.to_vec(),
            });
        }
        let value = self.v(a).broadcast_to(shape);
        Ok(self.push(value, Op::BroadcastTo(a.0)))
    }

    /// Sums leading axes away; `shape` must be a suffix of `a`'s shape.
    pub fn sum_to(&mut self, a: Var, shape: &[usize]) -> OpResult {
        let sa = self.shape(a);
        if sa == shape {
            return Ok(a);
        }
        if !is_trailing_suffix(shape, sa) {
            return Err(AutodiffError::ShapeMismatch {
                op: "sum_to",
                left: sa.to_vec(),
                right: shape.to_vec(),
            });
        }
        let value = self.v(a).sum_to(shape);
        Ok(self.push(value, Op::SumTo(a.0)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> OpResult {
        if self.shape(a) == shape {
            return Ok(a);
        }
        let value = self.v(a).clone().reshaped(shape.to_vec())?;
        Ok(self.push(value, Op::Reshape(a.0)))
    }

    /// Flattens to one dimension.
    pub fn flatten(&mut self, a: Var) -> OpResult {
        let n = self.v(a).numel();
        self.reshape(a, &[n])
    }

    /// Concatenates along the leading axis.
    pub fn concat(&mut self, parts: &[Var]) -> OpResult {
        let first = *parts.first().ok_or(AutodiffError::EmptyInput("concat"))?;
        let tail = self.shape(first).get(1..).map(<[usize]>::to_vec);
        let Some(tail) = tail else {
            return Err(AutodiffError::Rank {
                op: "concat",
                expected: 1,
                shape: Vec::new(),
            });
        };
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    left: self.shape(first).to_vec(),
                    right: s.to_vec(),
                });
            }
            rows += s[0];
            data.extend_from_slice(self.v(p).data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Concat(parts.iter().map(|p| p.0).collect())))
    }

    /// Rows `start..start + len` along the leading axis.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> OpResult {
        let s = self.shape(a).to_vec();
        if s.is_empty() || start + len > s[0] {
            return Err(AutodiffError::SliceOutOfRange {
                start,
                len,
                shape: s,
            });
        }
        let idx: Vec<usize> = (start..start + len).collect();
        let value = self.v(a).select_rows(&idx);
        Ok(self.push(value, Op::Slice { src: a.0, start }))
    }

    /// Gradients of scalar `output` with respect to each of `wrt`.
    ///
    /// With `create_graph` the returned vars are differentiable functions of
    /// the inputs; otherwise they are constant leaves. Inputs that `output`
    /// does not depend on get exact zeros.
    pub fn grad(&mut self, output: Var, wrt: &[Var], create_graph: bool) -> Result<Vec<Var>, AutodiffError> {
        if create_graph {
            self.backward(output, wrt)
        } else {
            let mark = self.nodes.len();
            let values = self.grad_values_inner(output, wrt)?;
            self.truncate(mark);
            Ok(values.into_iter().map(|t| self.leaf(t)).collect())
        }
    }

    /// Gradient values without leaving anything on the tape.
    pub fn grad_values(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Tensor>, AutodiffError> {
        let mark = self.nodes.len();
        let values = self.grad_values_inner(output, wrt)?;
        self.truncate(mark);
        Ok(values)
    }

    fn grad_values_inner(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Tensor>, AutodiffError> {
        let grads = self.backward(output, wrt)?;
        Ok(grads.into_iter().map(|g| self.v(g).clone()).collect())
    }

    fn backward(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>, AutodiffError> {
        let out_shape = self.shape(output).to_vec();
        if self.v(output).numel() != 1 {
            return Err(AutodiffError::NonScalarOutput(out_shape));
        }
        let top = output.0;
        let mut needs = vec![false; top + 1];
        for w in wrt {
            if w.0 <= top {
                needs[w.0] = true;
            }
        }
        for i in 0..=top {
            if !needs[i] && self.nodes[i].op.parents().iter().any(|&p| needs[p]) {
                needs[i] = true;
            }
        }

        let mut adjoint: Vec<Option<Var>> = vec![None; top + 1];
        if needs[top] {
            adjoint[top] = Some(self.leaf(Tensor::filled(&out_shape, 1.0)));
        }
        for i in (0..=top).rev() {
            let Some(g) = adjoint[i] else { continue };
            let op = self.nodes[i].op.clone();
            for (parent, contrib) in self.vjp(i, &op, g, &needs)? {
                adjoint[parent] = Some(match adjoint[parent] {
                    None => contrib,
                    Some(prev) => self.add(prev, contrib)?,
                });
            }
        }
        Ok(wrt
            .iter()
            .map(|w| match adjoint.get(w.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let shape = self.shape(*w).to_vec();
                    self.leaf(Tensor::zeros(&shape))
                }
            })
            .collect())
    }

    /// Vector-Jacobian product of node `i` with upstream gradient `g`.
    fn vjp(&mut self, i: usize, op: &Op, g: Var, needs: &[bool]) -> Result<Vec<(usize, Var)>, AutodiffError> {
        let out = Var(i);
        let mut res = Vec::with_capacity(2);
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if needs[a] {
                    res.push((a, g));
                }
                if needs[b] {
                    res.push((b, g));
                }
            }
            Op::Sub(a, b) => {
                if needs[a] {
                    res.push((a, g));
                }
                if needs[b] {
                    res.push((b, self.neg(g)));
                }
            }
            Op::Mul(a, b) => {
                if needs[a] {
                    res.push((a, self.mul(g, Var(b))?));
                }
                if needs[b] {
                    res.push((b, self.mul(g, Var(a))?));
                }
            }
            Op::Div(a, b) => {
                if needs[a] {
                    res.push((a, self.div(g, Var(b))?));
                }
                if needs[b] {
                    let go = self.mul(g, out)?;
                    let q = self.div(go, Var(b))?;
                    res.push((b, self.neg(q)));
                }
            }
            Op::Neg(a) => res.push((a, self.neg(g))),
            Op::Scale(a, c) => res.push((a, self.scale(g, c))),
            Op::AddScalar(a) => res.push((a, g)),
            Op::MatMul(a, b) => {
                if needs[a] {
                    let bt = self.transpose(Var(b))?;
                    res.push((a, self.matmul(g, bt)?));
                }
                if needs[b] {
                    let at = self.transpose(Var(a))?;
                    res.push((b, self.matmul(at, g)?));
                }
            }
            Op::Transpose(a) => res.push((a, self.transpose(g)?)),
            Op::Relu(a) => {
                let mask = self.v(Var(a)).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                let mask = self.leaf(mask);
                res.push((a, self.mul(g, mask)?));
            }
            Op::Sigmoid(a) => {
                let neg = self.neg(out);
                let one_minus = self.add_scalar(neg, 1.0);
                let ds = self.mul(out, one_minus)?;
                res.push((a, self.mul(g, ds)?));
            }
            Op::Exp(a) => res.push((a, self.mul(g, out)?)),
            Op::Log(a) => res.push((a, self.div(g, Var(a))?)),
            Op::Square(a) => {
                let ga = self.mul(g, Var(a))?;
                res.push((a, self.scale(ga, 2.0)));
            }
            Op::Sqrt(a) => {
                let two_out = self.scale(out, 2.0);
                res.push((a, self.div(g, two_out)?));
            }
            Op::Norm(a) => {
                let denom = if self.scalar(out) >= NORM_GRAD_FLOOR {
                    out
                } else {
                    self.constant(NORM_GRAD_FLOOR)
                };
                let coef = self.div(g, denom)?;
                res.push((a, self.mul(coef, Var(a))?));
            }
            Op::Sum(a) => {
                let shape = self.shape(Var(a)).to_vec();
                let g = self.reshape(g, &[])?;
                res.push((a, self.broadcast_to(g, &shape)?));
            }
            Op::BroadcastTo(a) => {
                let shape = self.shape(Var(a)).to_vec();
                res.push((a, self.sum_to(g, &shape)?));
            }
            Op::SumTo(a) => {
                let shape = self.shape(Var(a)).to_vec();
                res.push((a, self.broadcast_to(g, &shape)?));
            }
            Op::Reshape(a) => {
                let shape = self.shape(Var(a)).to_vec();
                res.push((a, self.reshape(g, &shape)?));
            }
            Op::Concat(ref parts) => {
                let mut start = 0;
                for &p in parts {
                    let rows = self.shape(Var(p))[0];
                    if needs[p] {
                        res.push((p, self.slice_rows(g, start, rows)?));
                    }
                    start += rows;
                }
            }
            Op::Slice { src, start } => {
                let src_shape = self.shape(Var(src)).to_vec();
                let rows = self.shape(g)[0];
                let mut pieces = Vec::with_capacity(3);
                if start > 0 {
                    let mut s = src_shape.clone();
                    s[0] = start;
                    pieces.push(self.leaf(Tensor::zeros(&s)));
                }
                pieces.push(g);
                let after = src_shape[0] - start - rows;
                if after > 0 {
                    let mut s = src_shape.clone();
                    s[0] = after;
                    pieces.push(self.leaf(Tensor::zeros(&s)));
                }
                res.push((src, self.concat(&pieces)?));
            }
        }
        Ok(res)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
