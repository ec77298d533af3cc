use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("transform is not invertible (det = {0:e})")]
    NonInvertible(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("negative value {value} at index {index} (metric requires non-negative input)")]
    NegativeInput { index: usize, value: f64 },

    #[error("image {width}x{height} is smaller than one {cell}x{cell} cell")]
    ImageTooSmall { width: usize, height: usize, cell: usize },

    #[error("training diverged at epoch {epoch} (loss = {loss})")]
    Divergence { epoch: usize, loss: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("transformation leaves no valid output site: {0}")]
    NoValidSites(String),

    #[error("map row {row} uses input index {col} outside its neighbourhood")]
    SupportViolation { row: usize, col: usize },

    #[error("missing map for {0}")]
    MissingMap(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
