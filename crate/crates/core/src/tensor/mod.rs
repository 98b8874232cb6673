//! Dense `f64` tensors, a reverse-mode autodiff tape, named parameters and
//! a finite-difference gradient checker.

mod autodiff;
mod dense;
mod gradcheck;
mod params;

pub use autodiff::{Gradients, Mask, Tape, Var};
pub use dense::Tensor;
pub use gradcheck::{grad_check, GradCheckReport};
pub use params::{ParamId, ParamStore, Parameter, Stage};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid shape {0:?}: dimensions must be positive")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("{op}: expected a matrix, got shape {shape:?}")]
    NotMatrix { op: &'static str, shape: Vec<usize> },
    #[error("{op}: range {start}+{len} out of bounds for shape {shape:?}")]
    OutOfRange {
        op: &'static str,
        shape: Vec<usize>,
        start: usize,
        len: usize,
    },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("cannot concatenate zero tensors")]
    EmptyConcat,
    #[error("duplicate parameter name {0:?}")]
    DuplicateParam(String),
}

impl TensorError {
    pub(crate) fn mismatch(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        TensorError::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
