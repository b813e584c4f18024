//! Minimal reverse-mode automatic differentiation over dense 2-D arrays,
//! plus the Adam optimizer. Every learnable computation in the crate goes
//! through [`Tape`].

mod adam;
mod gradcheck;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{finite_difference_check, GradCheckOptions, GradCheckReport};
pub use tape::{Axis, Tape, Var, LOG_CLAMP};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("data length {len} does not match shape ({rows}, {cols})")]
    DataLength { rows: usize, cols: usize, len: usize },
    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },
    #[error("slice rows {rows:?} cols {cols:?} out of bounds for shape {shape:?}")]
    Slice {
        shape: (usize, usize),
        rows: (usize, usize),
        cols: (usize, usize),
    },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("expected a vector, got shape {0:?}")]
    NotVector((usize, usize)),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar((usize, usize)),
    #[error("tape already differentiated; record a fresh forward pass")]
    TapeConsumed,
    #[error("gradients requested before backward")]
    NoBackward,
    #[error("non-finite gradient in parameter {param} at element {index}")]
    NonFinite { param: usize, index: usize },
    #[error("non-finite activation in {0}")]
    NonFiniteValue(&'static str),
    #[error("optimizer state covers {expected} parameters, got {got}")]
    ParamCount { expected: usize, got: usize },
}
