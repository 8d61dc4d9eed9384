use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{file}:{line}:{col}: {msg}")]
    Syntax { file: String, line: usize, col: usize, msg: String },
    #[error("{0}")]
    Lower(String),
    #[error("schedule line {line}: {msg}")]
    Schedule { line: usize, msg: String },
    #[error("{0}")]
    Pass(String),
    #[error("verification failed:\n{0}")]
    Verify(String),
    #[error("{0}")]
    Gcm(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
