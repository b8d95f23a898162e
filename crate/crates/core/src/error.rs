use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("node {node} ({op}): {message}")]
    NodeShape {
        node: usize,
        op: &'static str,
        message: String,
    },

    #[error("node {node} ({op}) produced a non-finite value")]
    NonFinite { node: usize, op: &'static str },

    #[error("gradient target node {node} is not a scalar (shape {shape:?})")]
    NotScalar { node: usize, shape: Vec<usize> },

    #[error("node {0} is not on this tape")]
    UnknownNode(usize),

    #[error("free variable `{0}` is not bound")]
    Unbound(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at iteration {iteration}: non-finite {term}")]
    Diverged { iteration: u64, term: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
