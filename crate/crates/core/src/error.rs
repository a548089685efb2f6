use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("small-frequency threshold undefined: denominator {0} <= 0")]
    DegenerateThreshold(f64),
    #[error("k = {k} lies outside the small-frequency zone (eps0 = {eps0})")]
    OutOfZone { k: f64, eps0: f64 },
    #[error("field is in physical space; transform to frequency first")]
    BackendMismatch,
    #[error("required moment vanishes: {0}")]
    HypothesisViolated(String),
    #[error("degenerate series: {0}")]
    DegenerateSeries(String),
    #[error("source history ends at t = {have}, requested t = {want}")]
    InsufficientHistory { have: f64, want: f64 },
    #[error("Picard iteration does not contract (ratios {0:?})")]
    NoContraction(Vec<f64>),
    #[error("RK4 step h = {h} exceeds stability bound {limit}")]
    StabilityLimit { h: f64, limit: f64 },
    #[error("dimension {n} unsupported for this operation (needs {need})")]
    DimensionUnsupported { n: usize, need: &'static str },
    #[error("config error: {0}")]
    Config(String),
    #[error("missing data: {0}")]
    MissingData(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
