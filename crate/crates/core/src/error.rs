use thiserror::Error;

/// Crate-wide error type.
///
/// Configuration errors name the offending field, evaluation errors carry the
/// sample point, and solver failures carry the final iteration statistics so
/// callers can report them without re-running.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("config error ({field}): {message}")]
    Config { field: String, message: String },

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("range error: {0}")]
    Range(String),

    #[error(
        "solver did not converge after {iters} iterations \
         (last update {last_update:.3e}, complementarity residual {comp:.3e})"
    )]
    NoConvergence {
        iters: usize,
        last_update: f64,
        comp: f64,
    },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("coercivity failure: {0}")]
    Coercivity(String),
}

impl Error {
    pub fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }

    pub fn eval(message: impl Into<String>) -> Self {
        Error::Eval(message.into())
    }
}

/// Parse failure with the byte offset of the offending token.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at byte {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

pub type Result<T> = std::result::Result<T, Error>;
