use thiserror::Error;

/// Errors produced by the planning toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid ship parameters: {0}")]
    InvalidParams(String),

    #[error("singular mass matrix: denominator {denominator:e} is below tolerance of scale {scale:e}")]
    SingularMassMatrix { denominator: f64, scale: f64 },

    #[error("integration diverged at t = {t:.3} s: {detail}")]
    IntegrationDiverged { t: f64, detail: String },

    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),

    #[error("invalid footprint: {0}")]
    InvalidFootprint(String),

    #[error("point coincides with polygon vertex {index}")]
    DegenerateRay { index: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid limits: {0}")]
    InvalidLimits(String),

    #[error("time {t} outside [0, {tf}]")]
    TimeOutOfRange { t: f64, tf: f64 },

    #[error("QP subproblem failed: {0}")]
    Qp(String),

    #[error("solver aborted: {0}")]
    SolverAborted(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("failed to parse {path}: {message}")]
    Parse { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}
