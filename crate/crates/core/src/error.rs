use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid color: component {index} is {value}")]
    InvalidColor { index: usize, value: f64 },

    #[error("lattice size mismatch: expected {expected}, found {found}")]
    LatticeSizeMismatch { expected: usize, found: usize },

    #[error("lattice size must be at least 2, got {0}")]
    LatticeTooSmall(usize),

    #[error("fusion needs at least one LUT")]
    EmptyFusion,

    #[error("expected {expected} fusion weights, got {found}")]
    WeightCountMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),

    #[error("image is {width}x{height}, needs at least {min}x{min}")]
    ImageTooSmall { width: usize, height: usize, min: usize },

    #[error("divergence: non-finite loss or gradient at step {step}")]
    Divergence { step: u64 },

    #[error("dataset has no readable samples")]
    EmptyDataset,

    #[error(".cube parse error at line {line}: {msg}")]
    Cube { line: usize, msg: String },

    #[error("checkpoint error at byte {offset}: {msg}")]
    Checkpoint { offset: u64, msg: String },

    #[error("image decode error at byte {offset}: {msg}")]
    ImageFormat { offset: u64, msg: String },

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("manifest error at line {line}: {msg}")]
    Manifest { line: usize, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
