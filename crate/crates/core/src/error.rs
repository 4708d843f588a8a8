use thiserror::Error;

/// Errors raised by the lattice, certificate, dynamics and simulation layers.
///
/// Negative scientific outcomes (an invalid certificate, a failed B-function
/// property) are values, not errors.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown B-function kind `{0}`")]
    UnknownBKind(String),

    #[error("B-function screening failed: B(0) = {value} (expected 1)")]
    BNotNormalized { value: f64 },

    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("potential is not finite at x = {x}")]
    NonFinitePotential { x: f64 },

    #[error("stationary weights underflow: the window is too wide for the potential")]
    WeightUnderflow,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("weight sequence must be positive; entry {idx} is {value}")]
    NonPositiveWeight { idx: usize, value: f64 },

    #[error("radius {radius} is not a multiple of the grid step {h}")]
    RadiusNotOnGrid { radius: f64, h: f64 },

    #[error("radius {radius} exceeds the lattice half-width {half_width}")]
    RadiusOutsideWindow { radius: f64, half_width: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("detailed balance violated: relative residual {residual:e} exceeds {tolerance:e}")]
    DetailedBalance { residual: f64, tolerance: f64 },

    #[error("zero variance: the Rayleigh quotient of a constant function is undefined")]
    ZeroVariance,

    #[error("perturbation ratio `{name}` is not finite")]
    NonFiniteRatio { name: &'static str },

    #[error("certificate is not valid: {0}")]
    InvalidCertificate(String),

    #[error("explicit step unstable: dt * max rate = {product} exceeds {limit}")]
    UnstableStep { product: f64, limit: f64 },

    #[error("initial density invalid: {0}")]
    InvalidDensity(String),

    #[error("density went negative at t = {time}: entry {idx} = {value:e}")]
    NegativeDensity { time: f64, idx: usize, value: f64 },

    #[error("decay fit needs at least {needed} points after burn-in, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("decay fit needs positive values; entry {idx} is {value}")]
    NonPositiveSeries { idx: usize, value: f64 },

    #[error("start node {0} lies outside the window")]
    StartOutsideWindow(i64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
