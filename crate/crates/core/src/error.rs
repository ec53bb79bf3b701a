use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Malformed or out-of-range caller input (dimensions, levels, signs).
    #[error("invalid input: {0}")]
    Input(String),

    /// Point lies outside the support of the standardized mGPD (`max(z) <= 0`).
    #[error("point outside support: {0}")]
    Support(String),

    /// Marginal transform undefined (`sigma + gamma * x <= 0`, overflow).
    #[error("domain error: {0}")]
    Domain(String),

    /// Quadrature mass fell below the representable floor.
    #[error("quadrature underflow: log integral {log_integral} below floor")]
    Underflow { log_integral: f64 },

    /// Non-finite intermediate in a flow or network evaluation.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("non-finite gradient in parameter slot {slot} (entry {index})")]
    NonFiniteGradient { slot: usize, index: usize },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Training { epoch: usize, reason: String },

    #[error("non-finite loss contribution from row {row}")]
    NonFiniteLoss { row: usize },

    /// API misuse, e.g. asking a tape for the gradient of a foreign value.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("degenerate generator: column {column} has zero mean after normalization")]
    DegenerateGenerator { column: usize },

    #[error("sample too small: {0}")]
    SampleSize(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("no rows exceed the threshold")]
    EmptyExceedance,

    #[error("model file format error at `{path}`: {message}")]
    Format { path: String, message: String },

    #[error("unsupported model format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("data error: {0}")]
    Data(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}
