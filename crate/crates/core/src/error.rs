use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    DimensionMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("node index {index} out of range for {n} nodes")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("{}:{line}: {msg}", file.display())]
    Parse { file: PathBuf, line: usize, msg: String },

    #[error("shape mismatch in {}: {msg}", file.display())]
    Shape { file: PathBuf, msg: String },

    #[error("splits overlap: node {node} is in both {first} and {second}")]
    SplitOverlap {
        node: usize,
        first: &'static str,
        second: &'static str,
    },

    #[error("adjacency is not symmetric: ({row}, {col}) has no mirror entry")]
    Asymmetric { row: usize, col: usize },

    #[error("malformed {kind} file {}: {msg}", path.display())]
    Format {
        kind: &'static str,
        path: PathBuf,
        msg: String,
    },

    #[error("stale hop cache: cache was built from graph {cached}, dataset hashes to {actual}")]
    StaleCache { cached: String, actual: String },

    #[error("training diverged at epoch {epoch}: {msg}")]
    Divergence { epoch: usize, msg: String },

    #[error("config: {0}")]
    Config(String),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dims(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::DimensionMismatch {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad or inconsistent input data (as opposed to
    /// divergence or usage problems).
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Divergence { .. } | Error::Config(_))
    }
}
