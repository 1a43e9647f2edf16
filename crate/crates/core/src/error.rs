use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("quadrature too coarse: need at least {required_nodes} nodes per axis (have {have})")]
    Refinement { required_nodes: usize, have: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("function is not in the normalized class: worst local mass ratio {worst_ratio}")]
    LambdaClass { worst_ratio: f64 },

    #[error("malformed data: {0}")]
    Malformed(String),
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> LabError {
    LabError::Parameter { name, reason: reason.into() }
}
