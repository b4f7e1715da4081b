use std::path::PathBuf;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}:{line}:{column}: {message}", file.display())]
    Parse {
        file: PathBuf,
        line: u64,
        column: usize,
        message: String,
    },
    #[error("{}: {message}", file.display())]
    DimensionMismatch { file: PathBuf, message: String },
    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Engine(#[from] del_core::Error),
}

impl CliError {
    pub(crate) fn config(key: &str, message: impl Into<String>) -> Self {
        CliError::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn engine(&self) -> Option<&del_core::Error> {
        match self {
            CliError::Engine(e) => Some(e),
            _ => None,
        }
    }
}
