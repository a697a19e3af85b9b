use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid scenario: `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("invalid scenario file: {0}")]
    Syntax(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    pub fn config(field: &str, message: impl Into<String>) -> Self {
        Self::Config { field: field.to_string(), message: message.into() }
    }

    /// Process exit status: 2 for configuration problems, 3 for numerical
    /// failures, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } | Self::Syntax(_) => 2,
            Self::Numerical(_) => 3,
            Self::Io(_) => 1,
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
