use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("eigenvalue {re:.3e}{im:+.3e}i has positive real part; the system is not admissible")]
    PositiveRealPartEigenvalue { re: f64, im: f64 },

    #[error("parameter `{name}` must be positive, got {value}")]
    NonPositiveParameter { name: &'static str, value: f64 },

    #[error("gain a_{index} = {value} must lie in (0, 1]")]
    NonPositiveGain { index: usize, value: f64 },

    #[error("pair is not controllable")]
    NotControllable,

    #[error("pair is not stabilizable: a critical mode is unreachable from the input")]
    NotStabilizable,

    #[error("ill-conditioned computation: {0}")]
    IllConditioned(String),

    #[error("gain k_2 must be nonzero")]
    ZeroK2,

    #[error("invalid derivative order: {0}")]
    InvalidOrder(String),

    #[error("requested jet order {requested} exceeds the supported order {max}")]
    OrderTooHigh { requested: usize, max: usize },

    #[error("finite differences need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },

    #[error("trajectory diverged at t = {t} (|x| = {norm:.3e})")]
    Divergence { t: f64, norm: f64 },

    #[error("trajectory carries no derivative jets of order {0}")]
    MissingJets(usize),

    #[error("gain tuning failed: {0}")]
    TuningFailed(String),

    #[error("closed loop did not settle: {0}")]
    NonConvergent(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;
