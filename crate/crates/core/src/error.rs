use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown system `{0}` (expected linear_additive, sine_multiplicative or ou_nodelay)")]
    UnknownSystem(String),

    #[error("system `{system}` requires parameter `{param}`")]
    MissingParameter { system: String, param: String },

    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: String,
        value: f64,
        reason: String,
    },

    #[error("{0}")]
    Domain(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("non-finite value in {what} at step {step}")]
    NonFinite { what: String, step: usize },

    #[error("diffusion matrix is singular at t = {t}, x = {point:?}")]
    SingularSigma { t: f64, point: Vec<f64> },

    #[error("the inverse-gamma integral diverges on [{t_a}, {t_b}] with t0 = {t0}; the coupled pair must be merged instead")]
    DivergentIntegral { t_a: f64, t_b: f64, t0: f64 },

    #[error("log-Harnack inequality only holds for T > r0 (got T = {t_end}, r0 = {r0})")]
    HorizonTooShort { t_end: f64, r0: f64 },

    #[error("power p = {p} must exceed (1 + K2 K3)^2 = {threshold}")]
    PowerOutOfRange { p: f64, threshold: f64 },

    #[error("no admissible epsilon found on the grid (Theta_p empty after gridding)")]
    EmptyThetaSet,

    #[error("lemma constraint violated: {0}")]
    LemmaConstraint(String),

    #[error("exponent overflow: lambda = {lambda}, path {path}, exponent {exponent}")]
    ExponentOverflow {
        lambda: f64,
        path: u64,
        exponent: f64,
    },

    #[error("test function `{name}` returned {value}, outside its declared range [{lower}, {upper}]")]
    TestFunctionRange {
        name: String,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn ensure_finite(what: &str, step: usize, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            what: what.to_string(),
            step,
        })
    }
}
