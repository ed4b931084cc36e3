use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or out-of-range input supplied by the caller.
    #[error("input error: {0}")]
    Input(String),

    /// An exponent or intermediate value left the representable range.
    #[error("range error: {0}")]
    Range(String),

    /// The requested configuration is valid mathematically but not supported here.
    #[error("capability error: {0}")]
    Capability(String),

    /// A linear system could not be solved reliably.
    #[error("solver error: {message} (estimated condition number {condition:e})")]
    Solver { message: String, condition: f64 },

    /// Non-finite or otherwise unusable data.
    #[error("data error: {0}")]
    Data(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn capability(msg: impl Into<String>) -> Self {
        Error::Capability(msg.into())
    }

    /// True for failures caused by numerics rather than by bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Range(_) | Error::Solver { .. } | Error::Data(_)
        )
    }
}

/// Largest exponent accepted before `exp` is taken.
pub const MAX_EXPONENT: f64 = 700.0;

/// Exponentiate a log-space value, refusing to produce infinities.
pub(crate) fn checked_exp(exponent: f64, what: &str) -> Result<f64> {
    if exponent.is_nan() {
        return Err(Error::Range(format!("{what}: exponent is NaN")));
    }
    if exponent > MAX_EXPONENT {
        return Err(Error::Range(format!(
            "{what}: exponent {exponent:.3} exceeds {MAX_EXPONENT}"
        )));
    }
    Ok(exponent.exp())
}
