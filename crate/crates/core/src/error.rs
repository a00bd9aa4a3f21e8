use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("phi argument must be nonnegative, got {0}")]
    NonPositiveArgument(f64),
    #[error("custom phi has no limit registered at t = 0")]
    UndefinedLimit,
    #[error("invalid family parameter: {0}")]
    InvalidFamily(String),
    #[error("model cannot sample from its composite density")]
    NoSampler,
    #[error("value {value} outside the domain of h")]
    DomainViolation { value: f64 },
    #[error("parameter is inadmissible: {0}")]
    InadmissibleParameter(String),
    #[error("composite log-density is not finite at observation {row}")]
    NonFiniteDensity { row: usize },
    #[error("dimension mismatch: {0}")]
    ShapeMismatch(String),
    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("finite-difference step collides with the bound of coordinate {coord}")]
    StepUnderflow { coord: usize },
    #[error("solver did not converge after {iterations} iterations (score norm {score_norm:e})")]
    NoConvergence { iterations: usize, score_norm: f64 },
    #[error("estimate pinned to the admissible boundary at coordinate {coord}")]
    BoundaryHit { coord: usize },
    #[error("bordered KKT matrix is numerically singular")]
    SingularKkt,
    #[error("constraint must satisfy 0 < r < p (r = {r}, p = {p})")]
    InvalidConstraint { r: usize, p: usize },
    #[error("constraint Jacobian is rank deficient")]
    RankDeficientConstraint,
    #[error("matrix {0} is not positive definite")]
    NotPositiveDefinite(&'static str),
    #[error("weight list is empty")]
    EmptyWeights,
    #[error("weights must be positive, got {0}")]
    NonPositiveWeight(f64),
    #[error("probability {0} outside (0, 1)")]
    InvalidProbability(f64),
    #[error("alternative is degenerate: sigma = {0:e}")]
    DegenerateAlternative(f64),
    #[error("divergence must be positive for sample-size planning, got {0}")]
    NonPositiveDivergence(f64),
    #[error("empty spectrum")]
    EmptySpectrum,
    #[error("composite log-likelihood gap is negative ({0:e}): restricted fit failed")]
    NegativeGap(f64),
    #[error("rho = {0} is outside the admissible region")]
    InadmissibleRho(f64),
    #[error("Cholesky factorisation failed: {0}")]
    CholeskyFailure(String),
    #[error("sample must have {expected} columns, got {got}")]
    WrongDimension { expected: usize, got: usize },
    #[error("rate {0} is degenerate (0 or 1)")]
    DegenerateRate(f64),
    #[error("baseline power does not exceed its level (beta = {beta}, alpha = {alpha})")]
    DegenerateBaseline { beta: f64, alpha: f64 },
    #[error("{failed} of {total} replications failed, above the failure budget")]
    ReplicationFailures { failed: usize, total: usize },
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("I/O error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error: {0}")]
    Parse(String),
}
