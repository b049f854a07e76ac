use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("block index {index} out of range (problem has {len} blocks)")]
    BlockIndex { index: usize, len: usize },

    #[error("parameter vector has length {got}, expected {expected}")]
    ParamLength { got: usize, expected: usize },

    #[error("non-finite parameter at index {0}")]
    NonFinite(usize),

    #[error("cheirality violated in block {block}: depth {depth} <= {epsilon}")]
    Cheirality { block: usize, depth: f64, epsilon: f64 },

    #[error("a filter trial is already open")]
    TrialAlreadyOpen,

    #[error("no filter trial is open")]
    NoOpenTrial,

    #[error("factorization failed: non-positive pivot {pivot} at column {column}")]
    NotPositiveDefinite { column: usize, pivot: f64 },

    #[error("linear system is not finite")]
    NonFiniteSystem,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
