use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum CmrError {
    /// Non-finite entries, impossible shapes, or mismatched dimensions.
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    /// A spectral quantity is undefined for this input (e.g. the zero matrix).
    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),

    /// Training produced NaN/Inf values.
    #[error("numerical divergence: {0}")]
    NumericalDivergence(String),

    /// Malformed IDX or checkpoint bytes.
    #[error("format error at byte {offset}: {message}")]
    FormatError { offset: u64, message: String },

    /// An internal contract was violated (shape drift, out-of-range moments).
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CmrError>;
