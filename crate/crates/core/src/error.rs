use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid antenna configuration: {0}")]
    InvalidConfig(String),

    #[error("{name} = {value} is outside {expected}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("user set is empty")]
    EmptyUserSet,

    #[error("trial count must be at least 1")]
    ZeroTrials,

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("error probability must be positive, got {0}")]
    NonPositiveProbability(f64),

    #[error("arrival rate {lambda} is outside the stability region (limit {limit})")]
    Unstable { lambda: f64, limit: f64 },

    #[error("unknown protocol `{0}`")]
    UnknownProtocol(String),

    #[error("{0}")]
    InvalidArgument(String),

    #[error("failed to build worker pool: {0}")]
    WorkerPool(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_range(name: &'static str, value: f64, ok: bool, expected: &'static str) -> Result<()> {
    if ok && !value.is_nan() {
        Ok(())
    } else {
        Err(Error::OutOfRange { name, value, expected })
    }
}

pub(crate) fn check_pt(p_t: f64) -> Result<()> {
    check_range("p_t", p_t, p_t > 0.0 && p_t <= 1.0, "(0, 1]")
}
