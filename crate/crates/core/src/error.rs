use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected:?}, got {got:?}")]
    Shape {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("{what}: argument {value} outside the domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: String,
    },

    #[error("block index {index} out of range (model has {count} blocks)")]
    BlockIndex { index: usize, count: usize },

    #[error("zero norm for block {0}")]
    ZeroBlockNorm(usize),

    #[error("data not separable: {0}")]
    NotSeparable(String),

    #[error("learning-rate frame out of range: eta_hat = {0:e}; refresh the loss anchor")]
    Reframe(f64),

    #[error("retry budget of {0} exhausted in loss-based epoch")]
    RetryBudget(usize),

    #[error("IDX parse error at byte {offset}: {msg}")]
    Idx { offset: usize, msg: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("gradient is zero; the certificate is undefined (direction is exactly stationary)")]
    ZeroGradient,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(what: &'static str, value: f64, domain: impl Into<String>) -> Self {
        Error::Domain {
            what,
            value,
            domain: domain.into(),
        }
    }
}
