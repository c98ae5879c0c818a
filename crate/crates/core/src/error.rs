use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum KanError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid layer {layer}: {reason}")]
    InvalidLayer { layer: usize, reason: String },

    #[error("stale cache: expected {expected} columns, found {found}")]
    StaleCache { expected: usize, found: usize },

    #[error("activation cache is empty")]
    EmptyCache,

    #[error("invalid widths: {0}")]
    InvalidWidths(String),

    #[error("layer {layer} has {width} nodes, more than the supported {cap}")]
    LayerTooWide {
        layer: usize,
        width: usize,
        cap: usize,
    },

    #[error("invalid pruning criterion: {0}")]
    CriterionInvalid(String),

    #[error("pruning would remove every node of layer {layer}")]
    WouldEmptyLayer { layer: usize },

    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("need at least {needed} samples, got {found}")]
    InsufficientSamples { needed: usize, found: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("unsupported model format version {0}")]
    UnsupportedFormat(u32),

    #[error("unknown task `{0}` (valid tasks: multiplication, special, phase, complex)")]
    UnknownTask(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl KanError {
    /// True for failures caused by non-finite numbers during optimization.
    pub fn is_numeric(&self) -> bool {
        matches!(self, KanError::Divergence { .. })
    }
}

pub type Result<T> = std::result::Result<T, KanError>;
