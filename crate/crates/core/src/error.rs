use thiserror::Error;

use crate::device::PtmState;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam { field: String, reason: String },

    #[error("illumination {0} outside [0, 1]")]
    IllumOutOfRange(f64),

    #[error("stack solver did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("PTM re-triggers immediately after switching to {state} (astable configuration)")]
    AstableConfiguration { state: PtmState },

    #[error("no transition: largest LUT step is {max_step} codes (need at least {required})")]
    NoTransition { max_step: u8, required: u8 },

    #[error("sweep value {value} for {param} violates r_hrs > r_lrs > 0")]
    InvalidParamValue { param: &'static str, value: f64 },

    #[error("target code {target} is not reachable within the design bracket")]
    Unreachable { target: u8 },

    #[error("configuration has no tuning transistor (tc) enabled")]
    TcDisabled,

    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),

    #[error("base image has zero contrast")]
    ZeroBaseContrast,

    #[error("monte-carlo resampling exhausted for `{0}`")]
    ResampleExhausted(&'static str),

    #[error("no successful monte-carlo rows")]
    NoSuccessfulRows,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::InvalidParam {
        field: field.to_string(),
        reason: reason.into(),
    }
}
