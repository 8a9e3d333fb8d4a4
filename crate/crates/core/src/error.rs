use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed model file: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("shape mismatch in layer {layer}: {detail}")]
    ShapeMismatch { layer: usize, detail: String },

    #[error("unknown activation `{0}` (expected relu, sigmoid or tanh)")]
    UnknownActivation(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A constraint or monomial escaped every clique. Indicates a locality bug.
    #[error("assembly failed: {0}")]
    Assembly(String),

    #[error("factorization of the affine system failed: {0}")]
    Factorization(String),
}

pub type Result<T> = std::result::Result<T, Error>;
