//! Crate-wide error type.
//!
//! Variants are grouped by who can fix them: configuration errors mean the
//! caller passed bad settings, data errors mean the inputs on disk are bad,
//! and the remaining variants flag violated internal invariants.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor constructed or reshaped with an inconsistent shape.
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    /// Two tensors that must agree in shape do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Non-finite value where a finite one is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Convolution or pooling window does not fit the input.
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    /// Label outside [0, class_count).
    #[error("invalid label: {0}")]
    InvalidLabel(String),

    /// Bad hyperparameter or option value.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Input data violates a documented precondition.
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// Operation called in a state that does not support it.
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// Network structure cannot support the requested operation.
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    /// Leaf weight denominator (sum of hessians + lambda) is not positive.
    #[error("degenerate leaf: {0}")]
    DegenerateLeaf(String),

    /// Metric denominator is zero; the value is undefined, not zero.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Failed to load or parse an input file.
    #[error("load error: {0}")]
    Load(String),

    /// Failed to serialize or deserialize a model artifact.
    #[error("serialize error: {0}")]
    Serialize(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors a caller fixes by changing options, not inputs.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::InvalidConfig(_))
    }

    /// True for errors caused by the data handed in (files, labels, pixels).
    pub fn is_data(&self) -> bool {
        matches!(
            self,
            Error::InvalidData(_)
                | Error::InvalidLabel(_)
                | Error::Load(_)
                | Error::Serialize(_)
                | Error::Io(_)
        )
    }
}
