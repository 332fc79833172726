use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty shape")]
    EmptyShape,

    #[error("dimension must be at least 3, got {0}")]
    DimensionTooSmall(usize),

    #[error("window clips K_N (window radius {window}, required at least {required})")]
    WindowClipsTarget { window: i64, required: i64 },

    #[error("K too large for R (K^2delta must fit inside the ball of radius R/2)")]
    ShapeTooLargeForR,

    #[error("solver did not converge: residual {residual:.3e} after {iterations} iterations")]
    SolverNoConvergence { residual: f64, iterations: usize },

    #[error("eigensolver failed after {iterations} iterations (residual {residual:.3e})")]
    EigensolverFailure { residual: f64, iterations: usize },

    #[error("domain is disconnected: Perron-Frobenius inapplicable")]
    DisconnectedDomain,

    #[error("start site outside the confined state space")]
    StartOutsideDomain,

    #[error("inequality vacuous: tilted probability is zero")]
    VacuousInequality,

    #[error("target set is empty")]
    EmptyTarget,

    #[error("A1 too small for meaningful J (excursion target count is zero)")]
    DegenerateExcursionCount,

    #[error("invalid mesoscopic boxes: {0}")]
    BoxesInvalid(String),

    #[error("invalid parameter: {0}")]
    BadParameter(String),

    #[error("serialization: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
