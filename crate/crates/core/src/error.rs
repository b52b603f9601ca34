use thiserror::Error;

/// Errors raised by the sampler, the enrichment schemes and the benchmark problems.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid ensemble: {0}")]
    InvalidEnsemble(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite drift or state at step {step}")]
    DivergedStep { step: u64 },
    #[error("selection of {a} particles from a batch of {b} without replacement")]
    SelectionTooLarge { a: usize, b: usize },
    #[error("history holds {have} snapshots but {need} are required")]
    MissingHistory { have: usize, need: usize },
    #[error("constant schedule has no switch to place enrichments on")]
    EmptySchedule,
    #[error("heuristic needs {need} snapshots, history holds {have}")]
    NotReady { have: usize, need: usize },
    #[error("ill-posed problem: {0}")]
    IllPosed(String),
    #[error("linear solve failed: {0}")]
    SolveFailed(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown problem id `{0}`")]
    UnknownProblem(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("cache format error: {0}")]
    CacheFormat(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
