use std::fmt;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by tensor kernels, layers, data handling and the CLI.
#[derive(Debug)]
pub enum Error {
    /// Two tensors (or a tensor and an operator spec) have incompatible shapes.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A layer operation was called before the state it depends on was cached.
    MissingState {
        op: &'static str,
        missing: &'static str,
    },
    /// An input value is outside the operation's domain.
    Domain(String),
    /// An index is outside the valid range.
    Bounds { index: usize, len: usize },
    /// Invalid configuration (bad field value, unknown key, missing file the
    /// user pointed at).
    Config(String),
    /// Underlying I/O failure.
    Io(std::io::Error),
    /// A file exists but its contents are not in the expected format.
    Format(String),
    /// Training produced a non-finite loss.
    Numerical { epoch: usize, message: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: incompatible shapes {lhs:?} and {rhs:?}")
            }
            Error::MissingState { op, missing } => {
                write!(f, "{op}: called before {missing} was cached")
            }
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Bounds { index, len } => {
                write!(f, "index {index} out of range for length {len}")
            }
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Io(err) => write!(f, "I/O error: {err}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Numerical { epoch, message } => {
                write!(f, "numerical failure at epoch {epoch}: {message}")
            }
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err)
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        if err.is_io() {
            Error::Io(err.into())
        } else {
            Error::Format(err.to_string())
        }
    }
}

impl Error {
    /// Process exit code for the CLI: 2 config, 3 I/O or format, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io(_) | Error::Format(_) => 3,
            Error::Numerical { .. } => 4,
            _ => 1,
        }
    }
}
