use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("signal too short: {0}")]
    Length(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("cannot scale signal: {0}")]
    Scaling(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error("invalid input data: {0}")]
    Data(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable, machine-parsable category used in CLI error lines.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Length(_) => "length",
            Error::Config(_) => "config",
            Error::Shape(_) => "shape",
            Error::Geometry(_) => "geometry",
            Error::Scaling(_) => "scaling",
            Error::Training(_) => "training",
            Error::Data(_) => "data",
            Error::Io { .. } => "io",
            Error::Wav(_) => "wav",
            Error::Json(_) | Error::Csv(_) => "format",
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
