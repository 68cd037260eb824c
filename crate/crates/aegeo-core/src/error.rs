use thiserror::Error;

pub type Result<T> = std::result::Result<T, AeError>;

#[derive(Error, Debug)]
pub enum AeError {
    #[error("unknown metric family `{0}`")]
    UnknownFamily(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("metric not positive definite at {point:?} (min eigenvalue {min_eig:.3e})")]
    NotPositiveDefinite { point: [f64; 3], min_eig: f64 },
    #[error("singular metric inverse at {0:?}")]
    SingularMetric([f64; 3]),
    #[error("singular jacobian at {point:?} (|det| = {det:.3e})")]
    SingularJacobian { point: [f64; 3], det: f64 },
    #[error("chart mismatch: expected `{expected}`, got `{got}`")]
    ChartMismatch { expected: String, got: String },
    #[error("point {0:?} outside chart domain")]
    OutsideDomain([f64; 3]),
    #[error("invalid chart: {0}")]
    InvalidChart(String),
    #[error("insufficient derivative data: need order {need}, have {have}")]
    InsufficientDerivatives { need: usize, have: usize },
    #[error("solver failed after {iterations} iterations (residual {residual:.3e})")]
    SolverFailure { iterations: usize, residual: f64 },
    #[error("weight {0} outside admissible range ({1}, {2})")]
    WeightOutOfRange(f64, f64, f64),
    #[error("decay too weak: fitted exponent {fitted:.3} <= {required:.3}")]
    DecayTooWeak { fitted: f64, required: f64 },
    #[error("fields not conformally related (relative traceless part {0:.3e})")]
    NotConformal(f64),
    #[error("non-positive conformal factor at {0:?}")]
    NonPositiveFactor([f64; 3]),
    #[error("pipeline stage `{stage}` failed: {reason}")]
    StageFailure { stage: String, reason: String },
    #[error("{0}")]
    Invalid(String),
}
