use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
///
/// Variants are grouped by the kind of failure so the CLI can map them to
/// exit codes: input problems versus numerical trouble.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("length error: {0}")]
    Length(String),

    #[error("pairing error: {images} images but {labels} labels")]
    Pairing { images: usize, labels: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("label error at line {line}: {value} is not one of 0, 1, -1, +1")]
    Label { line: usize, value: String },

    #[error("size error: {0}")]
    Size(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("index error: {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    #[error("solver did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    Convergence { iterations: usize, grad_norm: f64 },

    #[error("conditioning error: {0}")]
    Conditioning(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics (non-convergence, loss of definiteness)
    /// rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Convergence { .. } | Error::Conditioning(_) => true,
            Error::Round { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
