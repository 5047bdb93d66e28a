use thiserror::Error;

/// Crate-wide error type. Variants are grouped by the exit code the CLI
/// reports for them: configuration problems vs. problems with the data.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("no episodes")]
    NoEpisodes,

    #[error("fit error: {0}")]
    Fit(String),

    #[error("unsupported model: {0}")]
    Unsupported(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("feature mismatch: {0}")]
    FeatureMismatch(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 for configuration errors, 2 for data errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Unsupported(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
