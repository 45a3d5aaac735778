use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("shape mismatch: {0}")]
    Mismatch(String),

    #[error("bad clip file: {0}")]
    Format(String),

    #[error("truncated payload: header describes {expected} elements, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
