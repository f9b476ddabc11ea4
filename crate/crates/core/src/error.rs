use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corpus line {line}: {message}")]
    Corpus { line: usize, message: String },

    #[error("priors line {line}: {message}")]
    Priors { line: usize, message: String },

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("syntax error at {line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("rule at line {line}: {message}")]
    Validation { line: usize, message: String },

    #[error("grounding template #{template} (line {line}): {message}")]
    Grounding {
        template: usize,
        line: usize,
        message: String,
    },

    #[error("infeasible program; violated constraints: {}", .violated.join(", "))]
    Infeasible { violated: Vec<String> },

    #[error("enumeration needs {needed} assignments, cap is {cap}; use branch-and-bound")]
    EnumerationCap { needed: f64, cap: u64 },

    #[error("negative weight {weight} on hinge potential {index}; hinge weights must be >= 0")]
    NegativeWeight { index: usize, weight: f64 },

    #[error("solver: {0}")]
    Solver(String),

    #[error("learning: {0}")]
    Learning(String),

    #[error("lexicon: {0}")]
    Lexicon(String),

    #[error("config: {0}")]
    Config(String),

    #[error("data: {0}")]
    Data(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used to pick a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Solver,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Syntax { .. } | Error::Validation { .. } | Error::Config(_) | Error::EnumerationCap { .. } => {
                ErrorKind::Config
            }
            Error::Infeasible { .. } | Error::Solver(_) | Error::NegativeWeight { .. } => ErrorKind::Solver,
            _ => ErrorKind::Data,
        }
    }
}
