use thiserror::Error;

/// Errors raised by the simulator and its diagnostics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid exponent: q = {q} must exceed 7 + sqrt(33) = {threshold:.6}")]
    InvalidExponent { q: f64, threshold: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("config line {line}: {message}")]
    ConfigLine { line: usize, message: String },

    #[error("query outside grid: {0}")]
    OutOfDomain(String),

    #[error("time {s} outside field history [{start}, {end}]")]
    OutsideHistory { s: f64, start: f64, end: f64 },

    #[error("point |x| = {norm} below admissibility radius {radius}")]
    Inadmissible { norm: f64, radius: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("det B = {det} <= 0 at v = {v:?}; change of variables inadmissible")]
    NonPositiveJacobian { det: f64, v: [f64; 3] },

    #[error("tail fit needs at least {needed} usable points, found {found}")]
    InsufficientPoints { needed: usize, found: usize },

    #[error("condition audit failed: {0}")]
    AuditFailed(String),

    #[error("blow-up guard tripped at t = {t}: ||rho||_inf = {rho_sup:e} > {limit:e}")]
    BlowUp { t: f64, rho_sup: f64, limit: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
