use std::path::PathBuf;

/// Errors raised anywhere in the library.
///
/// Variants are grouped by the exit status the command-line front end maps
/// them to: configuration problems, data problems, and numerical failures.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config: {0}")]
    Config(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("label `{label}` is not in the tagset of task `{task}`")]
    UnknownLabel { label: String, task: String },

    #[error("unknown task `{task}` (available: {available})")]
    UnknownTask { task: String, available: String },

    #[error("data: {0}")]
    Data(String),

    #[error("condition {0} is unavailable: {1}")]
    Unavailable(String, String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 1 usage/config, 2 data, 3 internal numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) => 1,
            Error::Parse { .. }
            | Error::UnknownLabel { .. }
            | Error::UnknownTask { .. }
            | Error::Data(_)
            | Error::Unavailable(..)
            | Error::Io { .. } => 2,
            Error::Shape { .. } | Error::Numerical(_) => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
