use num_complex::Complex64;

/// Errors raised by the numerical pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("strip violation in {context}: |Im| = {imag:.3e} exceeds {limit:.3e}")]
    StripViolation {
        context: String,
        imag: f64,
        limit: f64,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("tolerance not met in {context}: {detail}")]
    ToleranceNotMet { context: String, detail: String },
    #[error("quadrature failed: {0}")]
    QuadratureFailure(String),
    #[error("auxiliary solution u is not positive at x = {x} (u = {value:.3e})")]
    SingularU { x: f64, value: f64 },
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),
    #[error("jacobian branch failure at node {node}: |arg J| = {arg:.4}")]
    BranchFailure { node: usize, arg: f64 },
    #[error("eigensolver failed to converge: {0}")]
    ConvergenceFailure(String),
    #[error("contour passes within {distance:.3e} of the spectrum (minimum {threshold:.3e})")]
    ContourTooClose { distance: f64, threshold: f64 },
    #[error("linear solve failed: {0}")]
    SolveFailure(String),
    #[error("reduced resolvent is singular at z = {0}")]
    ReducedSingular(Complex64),
    #[error("ambiguous match near {0}")]
    MatchingAmbiguous(Complex64),
    #[error("lambda lies {distance:.3e} from the threshold set, below resolution")]
    ThresholdTooClose { distance: f64 },
    #[error("threshold {threshold} enters the rectangle at xi = {xi}")]
    ThresholdCollision { xi: f64, threshold: f64 },
    #[error("insufficient points: have {have}, need {need}")]
    InsufficientPoints { have: usize, need: usize },
    #[error("|theta| = {theta_abs:.4e} exceeds the admissible radius {radius:.4e}")]
    RadiusExceeded { theta_abs: f64, radius: f64 },
    #[error("not applicable: {0}")]
    NotApplicable(String),
    #[error("certification failed: {0}")]
    CertificationFailure(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("node {index} failed: {source}")]
    NodeFailure {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
