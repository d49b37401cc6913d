use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("frequency {f_hz} Hz outside model domain [{lo_hz}, {hi_hz}] Hz")]
    FrequencyOutOfDomain { f_hz: f64, lo_hz: f64, hi_hz: f64 },

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid absorption table: {0}")]
    InvalidTable(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("insufficient data for fit: {0}")]
    InsufficientData(String),

    #[error("exponential fit diverged from every start")]
    FitDiverged,

    #[error("non-finite integrand at f = {f_hz} Hz")]
    NonFiniteIntegrand { f_hz: f64 },

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("solver hit the iteration limit ({iterations}) with projected-gradient norm {residual:e}")]
    MaxIterations { iterations: usize, residual: f64 },

    #[error("grid oracle supports at most 3 sub-bands, got {0}")]
    TooLarge(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by the numbers rather than by the inputs' shape.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::FitDiverged
                | Error::NonFiniteIntegrand { .. }
                | Error::NonFiniteLoss { .. }
                | Error::MaxIterations { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
