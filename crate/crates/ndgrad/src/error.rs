use thiserror::Error;

/// Errors raised while building or differentiating a tape.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GradError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("domain error in {op}: element {index} = {value} is outside the domain")]
    Domain {
        op: &'static str,
        index: usize,
        value: f64,
    },

    #[error("non-finite value produced by {op} at element {index}")]
    NonFinite { op: &'static str, index: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("builder is not deterministic: two evaluations gave {first} and {second}")]
    NonDeterministic { first: f64, second: f64 },
}

pub type Result<T, E = GradError> = std::result::Result<T, E>;
