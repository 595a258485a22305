//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every primitive as it is evaluated; [`Tape::backward`]
//! sweeps it once in reverse and returns [`Gradients`] for every entry of a
//! [`ParameterSet`]. Broadcasting is limited to row vectors (`add_row`,
//! `mul_row`) and the column divisor of `div_col`.

mod gradcheck;
mod matrix;
mod params;
mod tape;

pub use gradcheck::{check_gradients, relative_error, GradCheck, GradCheckConfig};
pub use matrix::Matrix;
pub use params::{ema_update, AdamConfig, Gradients, ParamId, ParameterSet};
pub use tape::{Tape, Var};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("backward needs a 1x1 loss, got {shape:?}")]
    NotScalarLoss { shape: (usize, usize) },
    #[error("{len} values cannot fill a {rows}x{cols} matrix")]
    DataLength {
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error("concat of zero tensors")]
    EmptyConcat,
    #[error("column slice {start}..{end} out of range for {cols} columns")]
    SliceOutOfRange {
        start: usize,
        end: usize,
        cols: usize,
    },
    #[error("row index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
}
