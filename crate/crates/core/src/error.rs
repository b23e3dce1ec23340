use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid polyhedron: {0}")]
    InvalidPolyhedron(String),

    #[error("point is infeasible: max violation {violation:e} exceeds tolerance {tol:e}")]
    InfeasiblePoint { violation: f64, tol: f64 },

    #[error("polyhedron is empty: no feasible point satisfies constraint {constraint}")]
    EmptyPolyhedron { constraint: usize },

    #[error("invalid scaling matrix: {0}")]
    InvalidScaling(String),

    #[error("{what} exceeded its iteration cap of {cap} (last residual {residual:e})")]
    IterationCap {
        what: &'static str,
        cap: usize,
        residual: f64,
    },

    #[error(
        "armijo backtracking exceeded {cap} reductions (alpha = {alpha:e}); Lipschitz data is likely mis-specified"
    )]
    BacktrackCap { cap: usize, alpha: f64 },

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),

    #[error("objective does not provide a Hessian, required by {0}")]
    MissingHessian(&'static str),

    #[error("strong convexity matrix is required by {0} but was not supplied")]
    MissingStrongConvexity(&'static str),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("Newton-Taylor series diverges: spectral radius of the off-diagonal term is {rho}")]
    SeriesDivergent { rho: f64 },

    #[error("eigenvalue iteration failed to converge on a {dim}x{dim} matrix")]
    EigenNonConvergence { dim: usize },

    #[error("non-finite value encountered at iteration {k}: {what}")]
    NonFinite { k: usize, what: &'static str },

    #[error("rate window too short: {len} usable points, need at least {needed}")]
    WindowTooShort { len: usize, needed: usize },

    #[error("residuals at noise floor: value {value:e} below floor {floor:e}")]
    NoiseFloor { value: f64, floor: f64 },

    #[error("insufficient trials: got {got}, need at least {needed}")]
    InsufficientTrials { got: usize, needed: usize },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
