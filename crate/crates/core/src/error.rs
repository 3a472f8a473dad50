use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "speed lambda = {lambda} is below the critical value {critical} for p = {p}: \
         the tail roots are complex (oscillatory regime, not supported)"
    )]
    OscillatoryRegime { lambda: f64, p: f64, critical: f64 },

    #[error("profile integration blew up at x = {x} (v = {v})")]
    ProfileBlowUp { x: f64, v: f64 },

    #[error("profile collapsed at x = {x} (v = {v}, v_x = {v_x})")]
    ProfileCollapse { x: f64, v: f64, v_x: f64 },

    #[error("profile did not converge to 1 within the domain: {0}; try a larger domain")]
    ProfileNotConverged(String),

    #[error("fit window too small: {found} samples, need at least {needed}")]
    FitWindowTooSmall { found: usize, needed: usize },

    #[error("nonpositive value {value} at t = {at} in a log-linear fit window")]
    NonPositiveInFit { at: f64, value: f64 },

    #[error("no sign change while bracketing the intersection on [{lo}, {hi}]")]
    NoIntersection { lo: f64, hi: f64 },

    #[error("grid too narrow: boundary value {value:e} exceeds {limit:e}")]
    DomainTooSmall { value: f64, limit: f64 },

    #[error(
        "newton iteration did not converge (residual {residual:e} after {iterations} iterations)"
    )]
    NewtonDivergence { residual: f64, iterations: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error(
        "mismatched speeds: the functional compares supersolutions with equal (lambda, lambda')"
    )]
    MismatchedSpeeds,

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
