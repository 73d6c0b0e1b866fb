use thiserror::Error;

/// Failures raised by the engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("path {path} left the representable range at step {step}")]
    NonFiniteState { path: usize, step: usize },

    #[error("correlated change point requested; only an independent change point is supported")]
    UnsupportedEnlargement,

    #[error("volatility case mismatch: {0}")]
    VolCaseMismatch(String),

    #[error("degenerate likelihood on path {path} at step {step}")]
    DegenerateLikelihood { path: usize, step: usize },

    #[error("argument {value} outside the admissible range ({lo}, {hi})")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("root search did not converge: {0}")]
    NoConvergence(String),

    #[error("bracket search failed: {0}")]
    BracketFailure(String),

    #[error("shortfall benchmark {eps} is unattainable (loss infimum {floor})")]
    Unattainable { eps: f64, floor: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("risk constraint infeasible: eps {eps} below eps_min {eps_min}")]
    Infeasible { eps: f64, eps_min: f64 },

    #[error("quadrature refinement disagrees: {0}")]
    QuadratureFailure(String),

    #[error("regression ill-conditioned: {0}")]
    IllConditioned(String),

    #[error("information order violated: coarse {coarse} < fine {fine} beyond noise")]
    OrderViolation { coarse: f64, fine: f64 },

    #[error("indifference equation has no root in [{lo}, {hi}]")]
    NoRoot { lo: f64, hi: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
