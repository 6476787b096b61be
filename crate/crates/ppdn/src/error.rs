use thiserror::Error;

/// Errors surfaced by the tensor engine, the network builders, and the
/// training utilities.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at node {node}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        node: usize,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("tensor data length {len} does not match shape {shape:?}")]
    BadTensor { shape: Vec<usize>, len: usize },

    #[error("non-finite value produced at node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },

    #[error("non-finite update for parameter {name}")]
    NonFiniteUpdate { name: String },

    #[error("missing binding for input node {node}")]
    MissingBinding { node: usize },

    #[error("loss node {node} is not a scalar (shape {shape:?})")]
    LossNotScalar { node: usize, shape: Vec<usize> },

    #[error("backward called before forward")]
    BackwardBeforeForward,

    #[error("class label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("missing gradient for parameter {name}")]
    MissingGradient { name: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("epsilon {0} outside the supported range [1e-7, 1e-3]")]
    BadEpsilon(f64),

    #[error("corpus I/O: {0}")]
    Io(#[from] std::io::Error),

    #[error("corpus parse error at line {line}: {message}")]
    CorpusParse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
