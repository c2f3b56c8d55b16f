//! Reverse-mode differentiation over a small, fixed set of tensor
//! operations, plus parameter storage, Adam, and finite-difference checks.

mod adam;
mod gradcheck;
mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use adam::{adam_step, OptimizerConfig};
pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport, ParamCheck};
pub use params::{glorot_uniform, scaled_normal, AdamState, Gradients, ParamId, ParameterStore};
pub use tape::{sigmoid, softplus, Tape, Var, LAYER_NORM_EPS};
pub use tensor::{Scalar, Tensor};

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("expected rank-{expected} tensor, got shape {shape:?}")]
    Rank { expected: usize, shape: Vec<usize> },
    #[error("shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("expected a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParameter(String),
    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),
    #[error("{0}")]
    InvalidArgument(String),
}
