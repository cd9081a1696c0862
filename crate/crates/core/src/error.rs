use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input file. `line` and `column` are 1-based when known.
    #[error("{}{}: {message}", path.display(), location(*line, *column))]
    Parse {
        path: PathBuf,
        line: Option<usize>,
        column: Option<usize>,
        message: String,
    },

    #[error("invalid configuration `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure{}: {message}", iteration.map(|it| format!(" at iteration {it}")).unwrap_or_default())]
    Numerical { iteration: Option<usize>, message: String },
}

fn location(line: Option<usize>, column: Option<usize>) -> String {
    match (line, column) {
        (Some(l), Some(c)) => format!(" (line {l}, column {c})"),
        (Some(l), None) => format!(" (line {l})"),
        (None, Some(c)) => format!(" (column {c})"),
        (None, None) => String::new(),
    }
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Error::Numerical {
            iteration: None,
            message: message.into(),
        }
    }

    /// Attach an iteration number to a numerical failure.
    pub fn at_iteration(self, it: usize) -> Self {
        match self {
            Error::Numerical { message, .. } => Error::Numerical {
                iteration: Some(it),
                message,
            },
            other => other,
        }
    }
}
