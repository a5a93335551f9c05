use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoinError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("ordering error: t_next={t_next} must be < t={t}")]
    Ordering { t: f64, t_next: f64 },
    #[error("numerical error at step {step}: {msg}")]
    Numeric { step: usize, msg: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
}

impl CoinError {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            CoinError::Config(_) | CoinError::Domain(_) | CoinError::Shape { .. } => 2,
            CoinError::Numeric { .. } | CoinError::Ordering { .. } | CoinError::Geometry(_) => 3,
            CoinError::Io(_) | CoinError::Format(_) => 4,
        }
    }
}

impl From<serde_json::Error> for CoinError {
    fn from(e: serde_json::Error) -> Self {
        CoinError::Format(e.to_string())
    }
}

impl From<toml::de::Error> for CoinError {
    fn from(e: toml::de::Error) -> Self {
        CoinError::Config(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CoinError>;
