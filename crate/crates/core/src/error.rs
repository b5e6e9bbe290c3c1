use thiserror::Error;

/// Errors raised while building designs, fitting models, or running inference.
#[derive(Debug, Error)]
pub enum GamError {
    #[error("row {row}: level {level} is outside 1..={k}")]
    InvalidLevel { row: usize, level: f64, k: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("penalty order {order} needs at least {needed} levels/basis functions, got {got}")]
    PenaltyOrder {
        order: usize,
        needed: usize,
        got: usize,
    },

    #[error("constraint weights are all zero; cannot absorb the centering constraint")]
    DegenerateConstraint,

    #[error("covariate '{0}' is constant or non-finite; cannot build a spline basis")]
    DegenerateCovariate(String),

    #[error("response is invalid for the {family} family at row {row}: {value}")]
    InvalidResponse {
        family: &'static str,
        row: usize,
        value: f64,
    },

    #[error("penalized Hessian is singular even after ridge rescue")]
    SingularHessian,

    #[error("expected {expected} smoothing parameters, got {got}")]
    LambdaCount { expected: usize, got: usize },

    #[error("smoothing parameters must be non-negative and finite")]
    InvalidLambda,

    #[error("term {0} is not a smooth term")]
    NotSmooth(String),

    #[error("unknown column '{0}'")]
    UnknownColumn(String),

    #[error("invalid model specification: {0}")]
    Spec(String),

    #[error("row {row}, column '{column}': '{value}' is not numeric")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("simulation failed: {0}")]
    Simulation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GamError>;
