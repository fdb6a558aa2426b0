use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or command-line usage (exit code 1).
    #[error("config: {0}")]
    Config(String),
    /// Invalid data: annotations, tubes, scenes (exit code 2).
    #[error("data: {0}")]
    Data(String),
    /// Malformed files on disk (exit code 2).
    #[error("format: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// CLI exit code: 0 success, 1 usage, 2 data/format.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
