use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParameter(String),
    #[error("non-finite gradient in `{name}` at optimizer step {step}")]
    NonFiniteGradient { name: String, step: u64 },
    #[error("backward called on a non-scalar node of shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("checkpoint: bad magic bytes")]
    BadMagic,
    #[error("checkpoint: unsupported version {0}")]
    UnsupportedVersion(u16),
    #[error("checkpoint: truncated file")]
    Truncated,
    #[error("checkpoint: crc mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("checkpoint: block `{name}` has dtype tag {tag}, expected {expected}")]
    DTypeMismatch { name: String, tag: u8, expected: u8 },
    #[error("checkpoint: block `{name}` shape {found:?} does not match model shape {expected:?}")]
    BlockShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint: missing blocks {0:?}")]
    MissingBlocks(Vec<String>),
    #[error("checkpoint: malformed block: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;
