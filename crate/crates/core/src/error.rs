//! Error type shared by all pipeline stages.

use thiserror::Error;

/// Errors produced by pipeline operations.
///
/// `Io` signals trouble talking to the file system; everything else is a
/// data or configuration problem. Front ends use that split to pick exit
/// codes.
#[derive(Debug, Error)]
pub enum Error {
    /// Underlying file-system failure.
    #[error("i/o error{}: {source}", path_suffix(.path))]
    Io {
        path: Option<String>,
        #[source]
        source: std::io::Error,
    },

    /// A file could not be decoded (bad syntax, wrong schema, bad number).
    #[error("parse error in {path}, line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// Domain rules rejected otherwise well-formed data. Each entry names
    /// the offending object and the rule it broke.
    #[error("validation failed:\n{}", .0.join("\n"))]
    Validation(Vec<String>),

    /// A parameter or request that can never be satisfied.
    #[error("{0}")]
    InvalidInput(String),
}

fn path_suffix(path: &Option<String>) -> String {
    match path {
        Some(p) => format!(" ({p})"),
        None => String::new(),
    }
}

impl Error {
    /// Convenience constructor for `InvalidInput`.
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Attach a path to a raw I/O error.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: Some(path.into()),
            source,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(source: std::io::Error) -> Self {
        Error::Io { path: None, source }
    }
}
