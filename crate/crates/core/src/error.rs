use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value at {0}")]
    NonFinite(String),

    #[error("malformed {kind} file at byte {offset}: {reason}")]
    Format {
        kind: &'static str,
        offset: u64,
        reason: String,
    },

    #[error("checksum mismatch: stored {stored:016x}, computed {computed:016x}")]
    Checksum { stored: u64, computed: u64 },

    #[error("unsupported model format version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },

    #[error("training diverged in stage {stage} at iteration {iteration} (loss {loss})")]
    Diverged {
        stage: usize,
        iteration: usize,
        loss: f64,
        last_checkpoint: Option<PathBuf>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
