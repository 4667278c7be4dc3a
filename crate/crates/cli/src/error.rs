use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("{path}: line {line}: {msg}")]
    Manifest { path: PathBuf, line: usize, msg: String },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    Usage(String),
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: htsat_core::Error,
    },
}

impl From<htsat_core::Error> for CliError {
    fn from(source: htsat_core::Error) -> Self {
        CliError::Core {
            context: "model".into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}

pub(crate) trait CoreContext<T> {
    fn context(self, ctx: impl std::fmt::Display) -> Result<T>;
}

impl<T> CoreContext<T> for htsat_core::Result<T> {
    fn context(self, ctx: impl std::fmt::Display) -> Result<T> {
        self.map_err(|source| CliError::Core {
            context: ctx.to_string(),
            source,
        })
    }
}
