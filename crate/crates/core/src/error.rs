use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("image decode error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("image {image_id}: {msg}")]
    Dataset { image_id: String, msg: String },
    #[error("invalid dimensions: {0}")]
    Dimensions(String),
    #[error("empty mask: {0}")]
    EmptyMask(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("database format version {found} is not supported (this build reads {supported})")]
    Version { found: String, supported: String },
    #[error("database checksum failure: {0}")]
    Checksum(String),
    #[error("corrupt database: {0}")]
    Corrupt(String),
    #[error("{0}")]
    Tps(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
