use alloc::string::String;

/// Errors raised by the estimators in this crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("shape mismatch: expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("degenerate density: total mass {0} is not positive and finite")]
    DegenerateDensity(f64),

    #[error("domain error: {0}")]
    Domain(String),

    /// Observation `index` (0-based) is outside the kernel's sample space.
    #[error("observation {index}: {message}")]
    BadObservation { index: usize, message: String },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid weight schedule: {0}")]
    Schedule(String),

    /// The current mixture assigns zero density to observation `index` (0-based).
    #[error("zero predictive density at observation {index}")]
    ZeroPredictive { index: usize },

    #[error("zero mixture density at observation {index}")]
    ZeroMixture { index: usize },

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("design matrix error: {0}")]
    Design(String),

    #[error("out of range: {0}")]
    Range(String),

    #[error("invalid data: {0}")]
    Data(String),
}

impl Error {
    /// 0-based index of the observation the error refers to, if any.
    pub fn observation_index(&self) -> Option<usize> {
        match *self {
            Error::ZeroPredictive { index } | Error::ZeroMixture { index } | Error::BadObservation { index, .. } => {
                Some(index)
            }
            _ => None,
        }
    }

    pub(crate) fn at_observation(self, index: usize) -> Self {
        match self {
            Error::Domain(message) | Error::Range(message) => Error::BadObservation { index, message },
            other => other,
        }
    }

    /// True for failures of the numerical procedure itself (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ZeroPredictive { .. }
                | Error::ZeroMixture { .. }
                | Error::Optimization(_)
                | Error::DegenerateDensity(_)
        )
    }
}

pub type Result<T> = core::result::Result<T, Error>;
