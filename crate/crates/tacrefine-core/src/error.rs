//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no finger reaches the object: {0}")]
    NonContact(String),

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("domain tag mismatch: expected {expected}, found {found}")]
    DomainMismatch { expected: String, found: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u16, supported: u16 },

    #[error("checksum mismatch at byte offset {offset}: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { offset: u64, stored: u32, computed: u32 },

    #[error("file truncated: needed {needed} bytes, had {available}")]
    Truncated { needed: usize, available: usize },

    #[error("metadata mismatch: {0}")]
    MetadataMismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;
