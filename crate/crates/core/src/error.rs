//! Crate-wide error type.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// Shape mismatch or other broken call contract.
    Contract(String),
    /// Invalid configuration value (out-of-range hyperparameter, bad mode).
    Config(String),
    /// Data generation could not satisfy its constraints.
    Generation(String),
    /// Malformed corpus/checkpoint file; `line` is 1-based.
    Parse { line: usize, msg: String },
    /// Training produced a non-finite loss; carries a diagnostic snapshot.
    NonFinite {
        context: String,
        batch_ids: Vec<String>,
        param_norm: f64,
    },
    /// A closure handed to the gradient checker was not deterministic.
    NonDeterministic(String),
    /// Required data is absent (empty split, missing checkpoint, no artic).
    MissingData(String),
    Io(std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Contract(m) => write!(f, "contract violation: {m}"),
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::Generation(m) => write!(f, "generation error: {m}"),
            Error::Parse { line, msg } => write!(f, "parse error at line {line}: {msg}"),
            Error::NonFinite {
                context,
                batch_ids,
                param_norm,
            } => write!(
                f,
                "non-finite loss in {context} (batch {batch_ids:?}, param norm {param_norm:.6e})"
            ),
            Error::NonDeterministic(m) => write!(f, "non-deterministic closure: {m}"),
            Error::MissingData(m) => write!(f, "missing data: {m}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
