use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed record length: {len} bytes is not a multiple of {record}")]
    MalformedLength { len: usize, record: usize },

    #[error("non-finite value at record {index}")]
    NonFinite { index: usize },

    #[error("raw label id {0:#06x} has no remap entry")]
    UnmappedLabel(u16),

    #[error("bad magic, expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("payload length mismatch: expected {expected} bytes, found {found}")]
    PayloadLength { expected: usize, found: usize },

    #[error("row {row} not normalized (sum {sum})")]
    RowNotNormalized { row: usize, sum: f64 },

    #[error("negative score {value} at row {row}")]
    NegativeScore { row: usize, value: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: u32, num_classes: usize },

    #[error("IGNORE label at position {0}")]
    IgnoreLabel(usize),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numeric divergence: {0}")]
    Divergence(String),

    #[error("no evaluated points")]
    NoEvaluatedPoints,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    /// True for failures caused by training blowing up rather than by bad input.
    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::Divergence(_))
    }
}
