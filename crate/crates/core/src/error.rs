use ndgrad::GradError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Grad(#[from] GradError),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("mask has {pixels} pixels, above the graph limit of {limit}; crop the mask to at most {limit} pixels")]
    GraphTooLarge { pixels: usize, limit: usize },

    #[error("training diverged in {phase} (round {round}, epoch {epoch}): {detail}")]
    Diverged {
        phase: String,
        round: usize,
        epoch: usize,
        detail: String,
    },

    #[error("format error at byte {offset}: expected {expected}, found {found}")]
    Format {
        offset: u64,
        expected: String,
        found: String,
    },

    #[error("unknown {kind} `{name}` (known: {known})")]
    Unknown {
        kind: &'static str,
        name: String,
        known: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
