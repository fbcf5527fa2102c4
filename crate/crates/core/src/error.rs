use thiserror::Error;

/// Errors surfaced before a simulation starts or while reading configuration.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("antenna counts must be positive (got M_y={m_y}, M_z={m_z})")]
    EmptyArray { m_y: usize, m_z: usize },

    #[error("element spacing must be positive (got {0})")]
    BadSpacing(f64),

    #[error("array height must be non-negative (got {0})")]
    BadHeight(f64),

    #[error("B={b} must be a positive divisor of M={m}")]
    SubarrayDivisibility { m: usize, b: usize },

    #[error("subarray size M_b={m_b} is below the minimum of {min}")]
    SubarrayTooSmall { m_b: usize, min: usize },

    #[error("cell constraint violated: {0}")]
    Cell(String),

    #[error("could not place a user within [{d_min}, {d_max}] m after {budget} draws")]
    Unsatisfiable { d_min: f64, d_max: f64, budget: usize },

    #[error("{name} must lie in [0, 1] (got {value})")]
    Probability { name: &'static str, value: f64 },

    #[error("{0}")]
    Invalid(String),

    #[error("failed to parse config: {0}")]
    Parse(String),
}

pub type Result<T, E = ConfigError> = std::result::Result<T, E>;

pub(crate) fn check_probability(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(ConfigError::Probability { name, value })
    }
}
