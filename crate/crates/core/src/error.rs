use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the solver, the executors and the experiment runner.
#[derive(Debug, Error)]
pub enum ApalmError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("block index {index} out of range for {blocks} blocks")]
    BlockIndex { index: usize, blocks: usize },

    #[error("malformed gradient oracle: non-finite entry in block {block}")]
    NonFiniteGradient { block: usize },

    #[error("objective value {value} fell below the configured lower bound {bound}")]
    Unbounded { value: f64, bound: f64 },

    #[error("invalid regularizer: {0}")]
    Regularizer(String),

    #[error("stepsize {gamma} is outside the prox domain (prox bound {bound})")]
    StepsizeDomain { gamma: f64, bound: f64 },

    #[error("staleness overflow: stamp {requested} is older than the retained window (oldest {oldest})")]
    StalenessOverflow { requested: i64, oldest: i64 },

    #[error("realized delay {delay} exceeds the staleness bound {bound}")]
    Staleness { delay: usize, bound: usize },

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("line search stagnated after {shrinks} shrink steps at iteration {k}")]
    Stagnation { k: u64, shrinks: usize },

    #[error("monitoring window: {0}")]
    MonitoringWindow(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("trace schema mismatch: {0}")]
    Schema(String),

    #[error("worker panicked: {0}")]
    WorkerPanic(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ApalmError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ApalmError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, ApalmError>;
