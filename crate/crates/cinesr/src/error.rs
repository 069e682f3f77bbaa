//! Error type shared across the crate.
//!
//! Variants map one-to-one onto the CLI exit codes: schema/config errors
//! exit with 2, data errors with 3, shape errors with 4.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value or violated configuration invariant.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed file contents: missing annotation keys, bad headers,
    /// unparseable report lines.
    #[error("schema error: {0}")]
    Schema(String),

    /// Semantically invalid data: non-finite pixels, videos too short for
    /// the requested operation.
    #[error("data error: {0}")]
    Data(String),

    /// Mismatched tensor/image dimensions.
    #[error("shape error: {0}")]
    Shape(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for CLI commands. I/O failures are treated as
    /// data errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Schema(_) => 2,
            Error::Data(_) | Error::Io(_) => 3,
            Error::Shape(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
