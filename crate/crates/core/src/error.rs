use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("panel count must be even and at least 2, got {0}")]
    InvalidPanelCount(usize),
    #[error("invalid interval [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("non-finite function value at x = {at}")]
    NonFinite { at: f64 },
    #[error("invalid root scan configuration (scan_points = {scan_points}, abs_tol = {abs_tol})")]
    InvalidScanConfig { scan_points: usize, abs_tol: f64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. } | ParseError::UnknownIdentifier { offset, .. } => *offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("growth rate gamma({s}, {p}) = {value} is not positive")]
    GammaNonPositive { s: f64, p: f64, value: f64 },
    #[error("total population must be positive, got {0}")]
    NonPositivePopulation(f64),
    #[error("inflow must be finite and nonnegative, got {0}")]
    InvalidInflow(f64),
    #[error("characteristic function out of range at lambda = {0}")]
    CharacteristicOverflow(f64),
    #[error("unsupported case: {0}")]
    Unsupported(String),
    #[error("no fold in window C in [{lo}, {hi}]")]
    NoFold { lo: f64, hi: f64 },
    #[error("time step underflow at t = {t} (dt = {dt})")]
    StepUnderflow { t: f64, dt: f64 },
    #[error("negative density {value} at s = {s}, t = {t}")]
    NegativeDensity { value: f64, s: f64, t: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("size-age map failed: {0}")]
    AgeMap(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
