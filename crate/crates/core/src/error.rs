use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{primitive}: shape mismatch {shapes:?}")]
    Shape {
        primitive: &'static str,
        shapes: Vec<Vec<usize>>,
    },

    #[error("cosine of a zero-norm vector")]
    ZeroNorm,

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("graph already consumed by a backward pass; reset before reuse")]
    GraphConsumed,

    #[error("node {0} does not belong to this graph")]
    DanglingNode(usize),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
