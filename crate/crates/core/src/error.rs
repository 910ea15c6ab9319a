use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    /// A block with positive target margin holds no empirical mass, so the
    /// ratio step is undefined.
    #[error("partition {partition} block {block} ({label}) has zero empirical weight but target margin {target}")]
    ZeroCell {
        partition: usize,
        block: usize,
        label: String,
        target: f64,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("covariance is not positive semidefinite (eigenvalue {0:e})")]
    NotPositiveSemidefinite(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(#[from] toml::de::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn is_zero_cell(&self) -> bool {
        matches!(self, Error::ZeroCell { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
