use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("resource error: {0}")]
    Resource(String),
    #[error("empty support: no cell carries mass above the floor")]
    EmptySupport,
    #[error("cell {0} is not active")]
    InactiveCell(usize),
    #[error("evaluation error: {0}")]
    Eval(String),
    #[error("solver error: {message} (max residual {residual:.3e})")]
    Solver { message: String, residual: f64 },
    #[error("unsupported stratum: {0}")]
    UnsupportedStratum(String),
    #[error("inconclusive: {0}")]
    Inconclusive(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn solver(message: impl Into<String>, residual: f64) -> Self {
        Error::Solver { message: message.into(), residual }
    }
}
