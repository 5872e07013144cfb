use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Array or block length does not match what the operation expects.
    #[error("length mismatch: expected {expected}, got {actual} ({what})")]
    Length {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
        if expected == actual {
            Ok(())
        } else {
            Err(Error::Length {
                what,
                expected,
                actual,
            })
        }
    }

    /// Whether this is a user-facing configuration problem (as opposed to a
    /// runtime failure such as I/O).
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Length { .. })
    }
}
