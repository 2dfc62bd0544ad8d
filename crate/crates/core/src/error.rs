use alloc::string::String;

/// Errors raised by the numerical operations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid system: {0}")]
    InvalidSystem(String),
    #[error("invalid cocycle: {0}")]
    InvalidCocycle(String),
    #[error("point does not belong to this system")]
    PointMismatch,
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("operation unsupported: {0}")]
    Unsupported(&'static str),
    #[error("requested {requested} exceeds budget {budget}")]
    BudgetExceeded { requested: u64, budget: u64 },
    #[error("orbit segment is not recurrent enough: d(f^n y, y) = {distance:e} >= beta = {beta:e}")]
    NotRecurrent { distance: f64, beta: f64 },
    #[error("M^n - I is singular")]
    SingularLattice,
    #[error("period {0} is too long for exact integer arithmetic")]
    PeriodTooLong(u32),
    #[error("leaf parameter {requested} exceeds leaf radius {radius}")]
    LeafRadiusExceeded { requested: f64, radius: f64 },
    #[error("points too far apart: {distance:e} >= {radius:e}")]
    PointsTooFar { distance: f64, radius: f64 },
    #[error("matrix condition number {condition:e} exceeds bound {bound:e}")]
    IllConditioned { condition: f64, bound: f64 },
    #[error("series tail not certified at truncation {truncation}")]
    TailNotCertified { truncation: usize },
    #[error("zero-exponent screen failed: max |lambda| = {max_abs:e} > {threshold:e}")]
    ZeroExponentCheckFailed { max_abs: f64, threshold: f64 },
    #[error("no near returns found below beta")]
    NoReturnsFound,
    #[error("no admitted table point near the query")]
    NoNeighbor,
    #[error("points do not lie on a common local {0} leaf")]
    NotOnLeaf(&'static str),
    #[error("holonomy did not converge within {iterations} iterations (last change {last_change:e})")]
    NotConverged { iterations: usize, last_change: f64 },
    #[error("only {found} pairs available, need {required}")]
    InsufficientPairs { found: usize, required: usize },
    #[error("matrix is singular")]
    Singular,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
