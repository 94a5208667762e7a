use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type. `exit_code` groups variants the way the CLI
/// reports them: 2 for usage/config/data problems, 3 for numerical failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid fractional order {0}; need 0 < gamma <= 1")]
    InvalidOrder(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: {detail}")]
    DimensionMismatch {
        context: &'static str,
        detail: String,
    },

    #[error("history sum at step {step} needs {needed} recorded states, got {got}")]
    HistoryTooShort {
        step: usize,
        needed: usize,
        got: usize,
    },

    #[error("non-finite state produced at step {step}")]
    NonFiniteState { step: usize },

    #[error("non-finite adjoint produced at step {step}")]
    NonFiniteAdjoint { step: usize },

    #[error("non-finite objective at iteration {iteration}")]
    NonFiniteObjective { iteration: usize },

    #[error("non-finite gradient at iteration {iteration}")]
    NonFiniteGradient { iteration: usize },

    #[error("series did not converge after {terms} terms; last term magnitude {residual:e}")]
    SeriesDiverged { terms: usize, residual: f64 },

    #[error("line search failed at iteration {iteration} after {backtracks} backtracks")]
    LineSearchFailure { iteration: usize, backtracks: usize },

    #[error("flat parameter vector has length {got}, layout expects {expected}")]
    FlatLength { expected: usize, got: usize },

    #[error("outer iteration {outer}: {source}")]
    TrainFailure {
        outer: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    DataParse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("model file line {line}: {msg}")]
    ModelParse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for this error: 2 usage/config/data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::DataParse { .. }
            | Error::ModelParse { .. }
            | Error::InvalidArgument(_)
            | Error::Io(_) => 2,
            Error::TrainFailure { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
