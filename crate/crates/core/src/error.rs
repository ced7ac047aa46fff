use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("ply parse error at `{property}`: {message}")]
    Ply { property: String, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite loss component `{0}`")]
    NonFinite(&'static str),

    #[error("config error: {0}")]
    Config(String),

    #[error("empty scene: no Gaussians survive pruning")]
    EmptyScene,

    #[error(transparent)]
    Codec(#[from] crate::codec::CodecError),
}

impl Error {
    pub(crate) fn ply(property: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Ply {
            property: property.into(),
            message: message.into(),
        }
    }
}
