use thiserror::Error;

#[derive(Debug, Error)]
pub enum MsfemError {
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("config error at line {line}, key `{key}`: {message}")]
    Config { line: usize, key: String, message: String },
    #[error("expression `{expr}`: {message}")]
    Expression { expr: String, message: String },
    #[error("basis store is missing the {0} flavor")]
    MissingFlavor(&'static str),
    #[error("bubble integral vanishes on element {0}")]
    ZeroBubbleIntegral(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MsfemError>;
