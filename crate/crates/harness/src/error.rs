use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("post-selection inference failed for every subject: {0}")]
    AllPosiFailure(String),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: hrshift_core::Error,
    },
    #[error(transparent)]
    Core(#[from] hrshift_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    /// Process exit code: 2 config, 3 data, 4 all-subject posi failure.
    pub fn exit_code(&self) -> i32 {
        use hrshift_core::Error as E;
        match self {
            HarnessError::Config(_) | HarnessError::Json(_) => 2,
            HarnessError::AllPosiFailure(_) => 4,
            HarnessError::Core(e) | HarnessError::Context { source: e, .. } => match e {
                E::InvalidArgument(_) => 2,
                _ => 3,
            },
            _ => 3,
        }
    }
}

pub(crate) trait WithContext<T> {
    fn context(self, f: impl FnOnce() -> String) -> Result<T>;
}

impl<T> WithContext<T> for std::result::Result<T, hrshift_core::Error> {
    fn context(self, f: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|source| HarnessError::Context { context: f(), source })
    }
}
