use thiserror::Error;

/// Errors raised by the simulator, tracker, servo core and harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("joint {joint} at {value} rad is outside its limits [{min}, {max}]")]
    LimitViolation {
        joint: usize,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("point is behind the camera (depth {0} m)")]
    BehindCamera(f64),
    #[error("oracle jacobian unavailable: {0}")]
    OracleUnavailable(String),
    #[error("filter divergence: {0}")]
    FilterDivergence(String),
    #[error("jacobian adaptation diverged: {0}")]
    AdaptationDivergence(String),
    #[error("jacobian estimate is not initialized")]
    NotReady,
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
