use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("empty outpainting band: ratio {ratio} on width {width}")]
    EmptyBand { ratio: f64, width: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("config key `{path}`: {message}")]
    ConfigKey { path: String, message: String },

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss `{component}` at iteration {iteration}")]
    NonFiniteLoss { iteration: usize, component: String },

    #[error("bad fixture {path}: {reason}")]
    Fixture { path: PathBuf, reason: String },

    #[error("bad clip {path}: {reason}")]
    Clip { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Short machine-readable tag for error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Range(_) => "range",
            Error::EmptyBand { .. } => "empty_band",
            Error::Config(_) | Error::ConfigKey { .. } => "config",
            Error::NonFiniteGradient(_) => "non_finite_gradient",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Fixture { .. } => "fixture",
            Error::Clip { .. } => "clip",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
            Error::Json { .. } => "json",
        }
    }
}

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::result::Result<T, std::io::Error> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
