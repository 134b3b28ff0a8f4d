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

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0}: no records")]
    EmptyFile(PathBuf),

    #[error("empty dataset: no interactions survive binarization and filtering")]
    EmptyDataset,

    #[error("invalid split: {0}")]
    Split(String),

    #[error("prior graph has a cycle: {}", format_cycle(.0))]
    Cycle(Vec<String>),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("inverse of g did not converge for concept {concept} at value {value}")]
    NoConvergence { concept: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Invalid(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged at step {step}: {reason}")]
    Diverged {
        step: u64,
        reason: String,
        /// Best checkpoint seen before the failure, if validation ever ran.
        last_good: Option<Box<crate::checkpoint::Checkpoint>>,
    },

    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn format_cycle(nodes: &[String]) -> String {
    let mut out = nodes.join(" -> ");
    if let Some(first) = nodes.first() {
        out.push_str(" -> ");
        out.push_str(first);
    }
    out
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
