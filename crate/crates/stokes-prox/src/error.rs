use std::path::PathBuf;
use thiserror::Error;

/// Errors surfaced by the library and the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite iterate at outer iteration {iteration}: {detail}")]
    Divergence { iteration: usize, detail: String },

    #[error(
        "backtracking stalled at outer iteration {iteration}: beta reached {beta:.6e}, \
         h(current) = {h_current:.6e}, h(candidate) = {h_candidate:.6e}"
    )]
    BacktrackStall {
        iteration: usize,
        beta: f64,
        h_current: f64,
        h_candidate: f64,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
