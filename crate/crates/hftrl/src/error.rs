use std::path::{Path, PathBuf};

use hftrl_core::Error as CoreError;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A file that exists but cannot be decoded.
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
}

pub type AppResult<T> = std::result::Result<T, AppError>;

impl AppError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, msg: impl ToString) -> Self {
        AppError::Format {
            path: path.to_path_buf(),
            msg: msg.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Core(e) if e.is_numerical() => EXIT_NUMERICAL,
            AppError::Core(CoreError::Usage(_) | CoreError::InvalidConfig(_)) => EXIT_USAGE,
            AppError::Core(_) | AppError::Io { .. } | AppError::Format { .. } => EXIT_DATA,
            AppError::Config(_) | AppError::Usage(_) => EXIT_USAGE,
        }
    }
}
