use thiserror::Error;

/// Unified error type for the core crate.
///
/// Variants are grouped by how callers are expected to react: `Config` means
/// the request itself was malformed, `Data`/`Format` mean an input artifact
/// (corpus, checkpoint, manifest) is unusable, and the rest are programming
/// or state errors surfaced defensively.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("shape mismatch in {op}: {lhs} vs {rhs}")]
    Shape {
        op: &'static str,
        lhs: String,
        rhs: String,
    },
    #[error("degenerate input in {op}: {detail}")]
    Degenerate { op: &'static str, detail: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("state mismatch: {0}")]
    Consistency(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub fn shape(op: &'static str, lhs: impl ToString, rhs: impl ToString) -> Self {
        CoreError::Shape {
            op,
            lhs: lhs.to_string(),
            rhs: rhs.to_string(),
        }
    }

    pub fn degenerate(op: &'static str, detail: impl ToString) -> Self {
        CoreError::Degenerate {
            op,
            detail: detail.to_string(),
        }
    }
}
