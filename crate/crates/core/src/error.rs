use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("time {time} outside of path span [{start}, {end}]")]
    OutOfRange { time: f64, start: f64, end: f64 },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error(
        "signature kernel diverged (|f| > 1e300); rescale paths to a smaller magnitude"
    )]
    Divergence,

    #[error("rollout diverged at step {step}")]
    RolloutDivergence { step: usize },

    #[error("training loss became non-finite at step {step}")]
    LossDivergence { step: usize },

    #[error("kernel evaluation failed for pair ({i}, {j}): {source}")]
    Pair {
        i: usize,
        j: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for the runtime-divergence family (kernel, rollout, loss).
    pub fn is_divergence(&self) -> bool {
        match self {
            Error::Divergence | Error::RolloutDivergence { .. } | Error::LossDivergence { .. } => true,
            Error::Pair { source, .. } => source.is_divergence(),
            _ => false,
        }
    }

    pub(crate) fn at_pair(self, i: usize, j: usize) -> Self {
        Error::Pair {
            i,
            j,
            source: Box::new(self),
        }
    }
}
