//! Reverse-mode automatic differentiation over dense f64 tensors.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{analytic_gradient, finite_diff_check, max_relative_error, numeric_gradient, DEFAULT_EPS};
pub use params::{BoundParams, ParamSpec, ParamVector};
pub use tape::{sigmoid, Tape, Var, NORM_GRAD_FLOOR};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("shape {shape:?} needs {} elements, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("slice {start}..{} out of range for shape {shape:?}", start + len)]
    SliceOutOfRange {
        start: usize,
        len: usize,
        shape: Vec<usize>,
    },
    #[error("{0}: empty input")]
    EmptyInput(&'static str),
    #[error("gradient requires a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("duplicate parameter name `{0}`")]
    DuplicateName(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
