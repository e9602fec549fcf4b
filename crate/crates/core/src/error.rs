use std::fmt;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by tensor operations, numeric routines, and file formats.
#[derive(Debug)]
pub enum Error {
    /// Two tensors had incompatible shapes for an operation.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// An argument was out of range or otherwise unusable.
    InvalidArgument(String),
    /// A numeric routine could not proceed (singular system, non-finite
    /// values, ...).
    Numeric(String),
    /// A serialized tensor or model file was malformed. `offset` is the
    /// byte position at which the problem was detected.
    Format {
        path: String,
        offset: u64,
        what: String,
    },
    /// Underlying I/O failure, annotated with the path involved.
    Io { path: String, source: std::io::Error },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: shape mismatch between {lhs:?} and {rhs:?}")
            }
            Error::InvalidArgument(what) => write!(f, "invalid argument: {what}"),
            Error::Numeric(what) => write!(f, "numeric failure: {what}"),
            Error::Format { path, offset, what } => {
                write!(f, "{path}: bad data at byte {offset}: {what}")
            }
            Error::Io { path, source } => write!(f, "{path}: {source}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl Error {
    /// Helper for wrapping I/O errors with the offending path.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Helper for format errors.
    pub fn format(path: impl Into<String>, offset: u64, what: impl Into<String>) -> Self {
        Error::Format { path: path.into(), offset, what: what.into() }
    }
}
