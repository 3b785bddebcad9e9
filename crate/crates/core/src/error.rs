use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A kernel that must run in binary32 was handed binary16 data.
    #[error("precision violation: {0}")]
    PrecisionViolation(String),

    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite values: {0}")]
    NonFinite(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable short tag for machine-readable error reporting.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::PrecisionViolation(_) => "precision_violation",
            Error::InvalidSpec(_) => "invalid_spec",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NonFinite(_) => "non_finite",
            Error::Format { .. } => "format",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
