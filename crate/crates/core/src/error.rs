use thiserror::Error;

/// Errors raised by the simulation core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    /// An input lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A scatterer sits in a deep beam null; its measurement carries no information.
    #[error("unmeasurable scatterer: beam gain |rho|^2 = {gain_sq:e}")]
    Unmeasurable { gain_sq: f64 },

    /// Fusion could not produce an estimate (every AP excluded).
    #[error("estimation failure: {0}")]
    EstimationFailure(String),

    /// A matrix computation produced non-finite output.
    #[error("numeric error: {what} (condition estimate {condition:e})")]
    Numeric { what: String, condition: f64 },

    /// Configuration rejected during parsing or validation.
    #[error("config error{}: key `{key}`: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config {
        key: String,
        line: Option<usize>,
        message: String,
    },
}

impl SimError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        SimError::Domain(msg.into())
    }

    /// True for errors that stem from invalid user input rather than runtime numerics.
    pub fn is_validation(&self) -> bool {
        matches!(self, SimError::Config { .. })
    }
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
