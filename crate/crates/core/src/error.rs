use alloc::string::String;

use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    DimensionMismatch { op: &'static str, left: (usize, usize), right: (usize, usize) },

    #[error("inconsistent code: {0}")]
    InconsistentCode(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("syndrome is not in the column space of the check matrix")]
    InconsistentSyndrome,

    #[error("decoder contract breach: {0}")]
    DecoderContract(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value at node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },

    #[error("matrix is not positive definite (node {node})")]
    NotPositiveDefinite { node: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error: {0}")]
    Parse(String),
}
