use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum MoeError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("fit diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("singular constant: {0}")]
    SingularConstant(String),

    #[error("degenerate derivative class: {0}")]
    DegenerateClass(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MoeError>;
