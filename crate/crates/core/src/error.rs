use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the corpus, augmentation, prompting and annotation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed file {path}: {message}")]
    MalformedFile { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("duplicate domain `{0}`")]
    DuplicateDomain(String),

    #[error("empty schema: {0}")]
    EmptySchema(String),

    #[error("invalid {what}: {message}")]
    Invalid { what: &'static str, message: String },

    #[error("turn {t} out of range (dialog `{dialog_id}` has {len} turns)")]
    OutOfRange {
        dialog_id: String,
        t: usize,
        len: usize,
    },

    #[error("unknown domain `{0}`")]
    UnknownDomain(String),

    #[error("unknown name `{name}` in {scope}")]
    UnknownName { scope: String, name: String },

    #[error("rename collision in {scope}: `{name}` produced more than once")]
    Collision { scope: String, name: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("lexicon shapes differ: {0}")]
    ShapeMismatch(String),
}

impl Error {
    pub(crate) fn malformed(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::MalformedFile {
            path: path.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(what: &'static str, message: impl ToString) -> Self {
        Error::Invalid {
            what,
            message: message.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
