use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// A model-interface precondition was violated (shape or resolution mismatch).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("{stage} diverged at step {step}: loss = {loss}")]
    Divergence {
        stage: &'static str,
        step: usize,
        loss: f64,
    },

    #[error("stage `{stage}` requires upstream stage `{missing}`, which has not been run")]
    Dependency { stage: String, missing: String },

    #[error("stale cache for stage `{stage}`: {reason}")]
    StaleCache { stage: String, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("toy backend certification failed: {0}")]
    Certification(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
