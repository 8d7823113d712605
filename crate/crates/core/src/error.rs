use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("frontier is empty")]
    EmptyFrontier,
    #[error("node {0} is not a terminal of this trace")]
    UnknownTerminal(u64),
    #[error("trace contains no terminal")]
    NoTerminalFound,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}: {detail}")]
    NonFiniteLoss { epoch: usize, detail: String },
    #[error("training starved: no iteration produced any training data")]
    TrainingStarved,
    #[error("simplex stalled after {0} pivots")]
    SimplexStalled(usize),
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("invalid maze size {0}: must be odd and at least 5")]
    InvalidMazeSize(usize),
    #[error("graph with {0} nodes is too large for this solver")]
    TooLarge(usize),
    #[error("epsilon {0} >= 0.5: expected hitting time diverges")]
    Divergent(f64),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { line, msg: msg.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
