use thiserror::Error;

/// Process exit codes surfaced by the command-line driver.
pub mod exit_code {
    pub const SUCCESS: i32 = 0;
    pub const VALIDATION: i32 = 2;
    pub const HORIZON_EXHAUSTED: i32 = 3;
    pub const NUMERICAL: i32 = 4;
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid density table: {0}")]
    InvalidDensity(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error(
        "window is not positive semidefinite: leading minor {minor} has pivot {pivot:.3e} \
         (jitter {jitter:.1e})"
    )]
    NonPsd { minor: usize, pivot: f64, jitter: f64 },

    #[error(
        "cutoff search for level {level} exhausted the horizon {horizon}; \
         best average {best_average:.6} vs target {target:.6}"
    )]
    HorizonExhausted {
        level: usize,
        horizon: usize,
        best_average: f64,
        target: f64,
        cutoffs: Vec<usize>,
    },

    #[error("numerical fault: {0}")]
    Numerical(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::HorizonExhausted { .. } => exit_code::HORIZON_EXHAUSTED,
            Error::NonPsd { .. } | Error::Numerical(_) => exit_code::NUMERICAL,
            _ => exit_code::VALIDATION,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
