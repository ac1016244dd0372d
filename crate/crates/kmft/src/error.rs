use std::path::PathBuf;

/// Problems with the configuration; the CLI exits with status 2.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Failures while running an experiment; the CLI exits with status 1.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Core(#[from] kmft_core::Error),
    #[error("io error on {0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad file {0}: {1}")]
    Format(PathBuf, String),
    #[error("{0}")]
    Failed(String),
}

impl RunError {
    /// Short machine-readable kind for error reports.
    pub fn kind(&self) -> String {
        match self {
            RunError::Core(e) => {
                let dbg = format!("{e:?}");
                dbg.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("Core").to_string()
            }
            RunError::Io(..) => "Io".into(),
            RunError::Csv(_) => "Csv".into(),
            RunError::Json(_) => "Json".into(),
            RunError::Format(..) => "Format".into(),
            RunError::Failed(_) => "Failed".into(),
        }
    }
}

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T, RunError>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T, RunError> {
        self.map_err(|e| RunError::Io(path.into(), e))
    }
}
