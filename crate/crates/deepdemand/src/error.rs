use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
    /// Artifacts that were not produced together.
    #[error("refusing to mix artifacts: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Compute(#[from] deepdemand_core::Error),
}

impl AppError {
    /// 1 for failures inside the computation, 2 for bad input or IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Compute(_) => 1,
            _ => 2,
        }
    }

    pub(crate) fn format(path: &Path, message: impl std::fmt::Display) -> AppError {
        AppError::Format { path: path.to_path_buf(), message: message.to_string() }
    }
}

pub type AppResult<T> = Result<T, AppError>;

pub(crate) fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> AppError + '_ {
    move |source| AppError::Io { path: path.to_path_buf(), source }
}

/// Fails with a not-found error naming `path` unless it exists.
pub fn require(path: &Path) -> AppResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(AppError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        })
    }
}
