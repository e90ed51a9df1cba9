use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid sector: {0}")]
    InvalidSector(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("inconsistent duplicate entry at line {line}: {msg}")]
    Consistency { line: usize, msg: String },

    #[error("missing or malformed header: {0}")]
    Header(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix not symmetric: max |M - M^T| = {0:.3e}")]
    Asymmetric(f64),

    #[error("eigensolver residual floor not met: {0:.3e}")]
    Defective(f64),

    #[error("degenerate denominator: {0:.3e}")]
    DegenerateDenominator(f64),

    #[error("vanishing reference overlap: |<ref|v>| = {0:.3e}")]
    VanishingOverlap(f64),

    #[error("no eigenroot with reference overlap above {0}")]
    NoOverlapRoot(f64),

    #[error("external cluster operator contains internal excitation {0}")]
    InternalInExternal(String),

    #[error("series did not converge within {0} terms")]
    NonConvergence(usize),

    #[error("flow diverged: {0}")]
    Divergence(String),

    #[error("selection is empty; lower the threshold or raise K")]
    EmptySelection,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
