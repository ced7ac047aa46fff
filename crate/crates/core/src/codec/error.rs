use thiserror::Error;

/// Bitstream decoding and encoding failures.
#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("bad magic: expected \"GRDO\"")]
    BadMagic,

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),

    #[error("truncated section `{section}`: need {needed} bytes, {available} available")]
    Truncated {
        section: String,
        needed: usize,
        available: usize,
    },

    #[error("index {index} out of range for {tag} codebook of size {size}")]
    IndexOutOfRange { tag: &'static str, index: usize, size: usize },

    #[error("inconsistent cluster starts {0:?}")]
    InconsistentClusterStarts(Vec<u32>),

    #[error("invalid probability table for `{0}`")]
    InvalidTable(String),

    #[error("{0} trailing bytes after the last section")]
    TrailingBytes(usize),

    #[error("symbol {symbol} is outside a table of {size} entries")]
    SymbolOutOfRange { symbol: usize, size: usize },

    #[error("index stream for `{0}` is not empty but the codebook is")]
    EmptyCodebook(&'static str),
}
