use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch at layer {layer}: expected {expected:?}, found {found:?}")]
    LayerShape {
        layer: usize,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    Shape {
        context: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("invalid layer {layer}: {reason}")]
    InvalidLayer { layer: usize, reason: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("infeasible request: {0}")]
    Infeasible(String),

    #[error("non-finite value encountered in {context} at step {step}")]
    NonFinite { context: &'static str, step: usize },

    #[error("gradient requested for a non-scalar output of shape {0:?}")]
    NonScalarOutput(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, Error>;
