use thiserror::Error;

/// Errors produced by the market computations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("bias vectors have mismatched dimensions ({left} vs {right})")]
    BiasDimension { left: usize, right: usize },

    #[error("weight vector has {weights} entries but coalition has {members} members")]
    DimensionMismatch { weights: usize, members: usize },

    #[error("weights are not on the simplex: {0}")]
    NotOnSimplex(String),

    #[error("coalition is empty")]
    EmptyCoalition,

    #[error("coalition has {size} members, above the cap of {cap}")]
    CoalitionTooLarge { size: usize, cap: usize },

    #[error("variance formula undefined: need n > d + 1 (n = {n}, d = {d})")]
    InsufficientData { n: usize, d: usize },

    #[error("covariate index {index} out of range for k = {k}")]
    CovariateOutOfRange { index: usize, k: usize },

    #[error("price iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("point {t} is not interior to the domain ({lo}, {hi})")]
    NotInterior { t: f64, lo: f64, hi: f64 },

    #[error("singular term: {0}")]
    Singular(&'static str),

    #[error("standing assumptions violated: {0:?}")]
    Assumptions(Vec<crate::entry::Assumption>),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
