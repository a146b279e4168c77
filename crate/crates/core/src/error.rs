use std::path::PathBuf;

use comixify_nn::ManifestError;

/// Errors raised anywhere in the keyframe and stylisation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("cannot decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("fetch failed: {0}")]
    Fetch(String),
    #[error("download exceeds the {cap} byte limit")]
    Oversize { cap: u64 },
    #[error("model load failed: {0}")]
    ModelLoad(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("constraint violated: {0}")]
    Constraint(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate selection: {0}")]
    DegenerateSelection(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("training diverged at {unit} {index}")]
    TrainingDiverged { unit: &'static str, index: usize },
    #[error("I/O error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<ManifestError> for Error {
    fn from(e: ManifestError) -> Self {
        Error::ModelLoad(e.to_string())
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
