use thiserror::Error;

pub type Result<T> = std::result::Result<T, VldError>;

#[derive(Debug, Error)]
pub enum VldError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("training diverged: {part} is not finite")]
    Divergence { part: String },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("checkpoint load error: {0}")]
    Load(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl VldError {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            VldError::Config(_) | VldError::Parse { .. } => 2,
            VldError::Data(_) | VldError::EmptyInput(_) | VldError::Load(_) => 3,
            VldError::Divergence { .. } => 4,
            VldError::Dimension(_) | VldError::Contract(_) => 5,
            VldError::Io(_) => 6,
        }
    }
}

pub(crate) fn dim_err(msg: impl Into<String>) -> VldError {
    VldError::Dimension(msg.into())
}

pub(crate) fn config_err(msg: impl Into<String>) -> VldError {
    VldError::Config(msg.into())
}
