use thiserror::Error;

/// Errors shared by the classical and quantum solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("model evaluation produced a non-finite value")]
    ModelEvaluation,

    #[error("assumption violated: {0}")]
    AssumptionViolation(String),

    #[error("integration failed at t = {t}: {reason}")]
    IntegrationFailure {
        reason: String,
        t: f64,
        /// Last accepted state, flattened as (x, xi).
        last_state: Vec<f64>,
    },

    #[error("asymptote initialization did not converge (residual {residual})")]
    Initialization { residual: f64 },

    #[error("trajectory does not escape; no asymptote")]
    NoAsymptote,

    #[error("trajectory is captured by the fixed point; scattering data undefined")]
    Captured,

    #[error("seed failed energy-shell projection")]
    SeedProjection,

    #[error("singular projection of the Lagrangian manifold (caustic)")]
    CausticProjection,

    #[error("tail estimate {estimate} exceeds tolerance {tol}")]
    Precision { estimate: f64, tol: f64 },

    #[error("variational and finite-difference derivatives disagree ({relative} relative)")]
    DerivativeConsistency { relative: f64 },

    #[error("degenerate direction: {0}")]
    DegenerateDirection(String),

    #[error("Maslov determinant vanishes in an endpoint window; index undecidable")]
    MaslovUndecidable,

    #[error("grid does not resolve the requested dynamics: {0}")]
    Resolution(String),

    #[error("partial-wave truncation: |delta_m| above cutoff at m_max = {m_max}")]
    Truncation { m_max: usize },

    #[error("norm drift {drift} above step-size tolerance")]
    StepSize { drift: f64 },

    #[error("grid error: {0}")]
    Grid(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("ambiguous rank: singular value {value} within the indeterminate band")]
    IndeterminateRank { value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
