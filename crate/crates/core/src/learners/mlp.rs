//! Fully connected relu stacks over tape vars.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::autodiff::{AutodiffError, ParamVector, Tape, Tensor, Var};

/// Layer widths `[input, hidden.., output]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpShape {
    pub widths: Vec<usize>,
    pub bias: bool,
}

impl MlpShape {
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Self {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        Self { widths, bias: true }
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// Number of tensors this network owns.
    pub fn tensor_count(&self) -> usize {
        self.stride() * self.layers()
    }

    fn stride(&self) -> usize {
        if self.bias {
            2
        } else {
            1
        }
    }

    pub fn param_count(&self) -> usize {
        self.widths
            .windows(2)
            .map(|w| w[0] * w[1] + if self.bias { w[1] } else { 0 })
            .sum()
    }

    /// Appends `prefix.{i}.weight` / `prefix.{i}.bias` with fan-in uniform init.
    pub fn init_into(&self, prefix: &str, pv: &mut ParamVector, rng: &mut impl Rng) -> Result<(), AutodiffError> {
        for (i, w) in self.widths.windows(2).enumerate() {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            let weight: Vec<f64> = (0..w[0] * w[1]).map(|_| dist.sample(rng)).collect();
            pv.push(format!("{prefix}.{i}.weight"), Tensor::new(vec![w[0], w[1]], weight)?)?;
            if self.bias {
                let bias: Vec<f64> = (0..w[1]).map(|_| dist.sample(rng)).collect();
                pv.push(format!("{prefix}.{i}.bias"), Tensor::vector(bias))?;
            }
        }
        Ok(())
    }
}

/// Affine layer `x W + b`.
pub fn linear(tape: &mut Tape, x: Var, weight: Var, bias: Var) -> Result<Var, AutodiffError> {
    let h = tape.matmul(x, weight)?;
    tape.add(h, bias)
}

impl MlpShape {
    /// Relu between layers, identity after the last. `params` is laid out as
    /// written by [`MlpShape::init_into`].
    pub fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var, AutodiffError> {
        self.forward_with(tape, params, x, |_, _, h| Ok(h))
    }

    /// Like [`MlpShape::forward`], with `hook(tape, layer, h)` applied to every hidden activation.
    pub fn forward_with<F>(&self, tape: &mut Tape, params: &[Var], x: Var, hook: F) -> Result<Var, AutodiffError>
    where
        F: FnMut(&mut Tape, usize, Var) -> Result<Var, AutodiffError>,
    {
        forward_impl(tape, &params[..self.tensor_count()], self.stride(), x, hook)
    }
}

fn forward_impl<F>(tape: &mut Tape, params: &[Var], stride: usize, x: Var, mut hook: F) -> Result<Var, AutodiffError>
where
    F: FnMut(&mut Tape, usize, Var) -> Result<Var, AutodiffError>,
{
    let layers = params.len() / stride;
    let mut h = x;
    for l in 0..layers {
        h = if stride == 2 {
            linear(tape, h, params[2 * l], params[2 * l + 1])?
        } else {
            tape.matmul(h, params[l])?
        };
        if l + 1 < layers {
            h = tape.relu(h);
            h = hook(tape, l, h)?;
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    #[test]
    fn counts() {
        let s = MlpShape::new(1, &[40, 40], 1);
        assert_eq!(s.param_count(), 40 + 40 + 1600 + 40 + 40 + 1);
        let mut pv = ParamVector::new();
        s.init_into("net", &mut pv, &mut stream(0, Purpose::Init, 0)).unwrap();
        assert_eq!(pv.numel(), s.param_count());
        assert_eq!(pv.len(), s.tensor_count());
    }

    #[test]
    fn forward_shapes() {
        let s = MlpShape::new(2, &[3], 4);
        let mut pv = ParamVector::new();
        s.init_into("n", &mut pv, &mut stream(0, Purpose::Init, 0)).unwrap();
        let mut tape = Tape::new();
        let p = pv.bind(&mut tape);
        let x = tape.leaf(Tensor::zeros(&[5, 2]));
        let y = s.forward(&mut tape, &p.vars, x).unwrap();
        assert_eq!(tape.shape(y), &[5, 4]);
    }
}
