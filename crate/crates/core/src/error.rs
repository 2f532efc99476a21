use thiserror::Error;

/// Errors raised by the verification engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum JacobiError {
    #[error("unsupported sphere dimension {dim}: {reason}")]
    UnsupportedDimension { dim: usize, reason: String },

    #[error("vector is not tangent at the base point (normal component {normal_component:.3e})")]
    NonTangent { normal_component: f64 },

    #[error("capability unavailable: {0}")]
    Capability(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("unsupported form degree {0}")]
    UnsupportedDegree(usize),

    #[error("base object is not critical: first variation {first_variation:.3e} exceeds {threshold:.3e}")]
    NotCritical { first_variation: f64, threshold: f64 },

    #[error("base object is not critical: Euler-Lagrange residual {residual:.3e} exceeds {threshold:.3e}")]
    NotCriticalResidual { residual: f64, threshold: f64 },

    #[error("unknown catalog object `{0}`")]
    UnknownCatalog(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o failure: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, JacobiError>;
