//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid must be at least 2x2 with positive spacing, got {width}x{height}, h = {spacing}")]
    InvalidGrid {
        width: usize,
        height: usize,
        spacing: f64,
    },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("value buffer has length {got}, grid needs {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite value at pixel index {index}")]
    NonFinite { index: usize },
    #[error("mask selects no pixels; the data set must have positive measure")]
    EmptyMask,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("exponent constraint violated: need 1 < s < 1 + t/2, got s = {s}, t = {t}")]
    ExponentGate { s: f64, t: f64 },
    #[error("tensor field is not positive definite at pixel index {index}")]
    NotSpd { index: usize },
    #[error("inner solve failed to converge: {iterations} iterations, gradient sup-norm {grad_norm}")]
    InnerSolveFailed { iterations: usize, grad_norm: f64 },
    #[error("invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, Error>;
