use thiserror::Error;

use crate::dice::DualSolution;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { expected: Vec<usize>, actual: Vec<usize> },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("residual {residual:e} exceeds tolerance {tolerance:e}")]
    Residual { residual: f64, tolerance: f64 },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("exponent argument {0} exceeds overflow guard")]
    ExponentOverflow(f64),

    #[error("dual program is infeasible: initial states have no viable support in the data")]
    Infeasible,

    #[error("solver stopped after {} iterations with gradient norm {:e}", .0.iterations, .0.grad_inf_norm)]
    NotConverged(Box<DualSolution>),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn check_shape(expected: &[usize], actual: &[usize]) -> Result<()> {
    if expected != actual {
        return Err(Error::ShapeMismatch {
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        });
    }
    Ok(())
}
