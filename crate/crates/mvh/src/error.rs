use std::path::PathBuf;

/// Failures of the driver, each mapped to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error(transparent)]
    Core(#[from] mvh_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Malformed config, dataset or command-line input.
    #[error("{0}")]
    Invalid(String),
    #[error("training aborted: {error}; last good state written to {saved}")]
    Aborted { error: mvh_core::Error, saved: PathBuf },
}

pub type AppResult<T> = Result<T, AppError>;

impl AppError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AppError::Io { path: path.into(), source }
    }

    /// 2 for bad input, 3 for an aborted training run, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use mvh_core::Error as E;
        match self {
            AppError::Invalid(_) => 2,
            AppError::Aborted { .. } => 3,
            AppError::Core(e) => match e {
                E::Validation(_) | E::Config(_) | E::Data(_) | E::Checkpoint(_) | E::Shape { .. } => 2,
                E::NonFinite(_) | E::Training { .. } => 3,
                E::UndefinedMetric(_) | E::TapeConsumed => 1,
            },
            AppError::Io { .. } => 1,
        }
    }
}
