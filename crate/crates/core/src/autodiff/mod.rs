//! Reverse-mode automatic differentiation over dense `f64` tensors.

mod check;
mod gaussian;
mod params;
mod tape;
mod tensor;

pub use check::{input_gradient_check, param_gradient_check, relative_error, REL_ERR_FLOOR};
pub use gaussian::{gaussian_log_prob, gaussian_reparam, tanh_correction, LOG_STD_MAX, LOG_STD_MIN, TANH_EPS};
pub use params::{AdamConfig, ParameterSet};
pub use tape::{Elementwise, Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: input outside the domain")]
    Domain { op: &'static str },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("axis {axis} out of range for rank {rank}")]
    Axis { axis: usize, rank: usize },
    #[error("backward root must be scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("data of length {len} does not fill shape {shape:?}")]
    Length { shape: Vec<usize>, len: usize },
    #[error("{op}: expected {expected} arguments, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
}
