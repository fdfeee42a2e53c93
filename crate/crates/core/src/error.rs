use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left} and {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("loss must be a scalar of shape [1], got {0}")]
    NonScalarLoss(Shape),
    #[error("tensor is not part of this tape's graph: {0}")]
    Detached(&'static str),
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("function is not deterministic: two evaluations differ ({first} vs {second})")]
    Nondeterministic { first: f64, second: f64 },
    #[error("invalid argument `{field}`: {reason}")]
    InvalidArgument { field: String, reason: String },
    #[error("invalid configuration `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },
    #[error("bad magic bytes: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("truncated input: needed {needed} more bytes while reading {context}")]
    Truncated { context: &'static str, needed: usize },
    #[error("dimension overflow while reading {0}")]
    DimensionOverflow(&'static str),
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("unknown tap `{name}`; valid taps: {valid}")]
    UnknownTap { name: String, valid: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn arg(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for errors caused by bad user input (configs, arguments, files) as
    /// opposed to failures while running a valid request.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument { .. }
                | Error::InvalidConfig { .. }
                | Error::BadMagic { .. }
                | Error::Truncated { .. }
                | Error::DimensionOverflow(_)
                | Error::Malformed(_)
                | Error::UnknownTap { .. }
                | Error::Json { .. }
        )
    }
}
