use std::io;

use thiserror::Error;

/// Errors produced by the classification toolkit.
#[derive(Debug, Error)]
pub enum HsiError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("nu = {nu} is infeasible (maximum feasible value is {nu_max})")]
    InfeasibleNu { nu: f64, nu_max: f64 },

    #[error("binary training set must contain both labels")]
    SingleClass,

    #[error("sigmoid fit did not converge (gradient norm {grad_norm:e})")]
    SigmoidNotConverged { grad_norm: f64 },

    #[error("class {class} has {available} labeled pixels, {requested} requested")]
    ClassTooSmall {
        class: usize,
        available: usize,
        requested: usize,
    },

    #[error("testing set is empty")]
    EmptyTesting,

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl HsiError {
    /// True for failures of an iterative numerical procedure, as opposed
    /// to bad input data or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(self, HsiError::SigmoidNotConverged { .. })
    }
}

pub type Result<T> = std::result::Result<T, HsiError>;
