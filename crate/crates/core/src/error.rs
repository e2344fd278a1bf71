use thiserror::Error;

/// Errors raised by every stage of the synthesis pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("modelling assumption violated: {0}")]
    AssumptionViolation(String),

    #[error("control level {level} outside [0, {max}]")]
    ControlOutOfRange { level: f64, max: f64 },

    #[error("state {0} outside [0, 1]")]
    StateOutOfRange(f64),

    #[error("target state {target} is not on the forward orbit from {start} under w = {level}")]
    Unreachable { start: f64, target: f64, level: f64 },

    #[error("invalid control schedule: {0}")]
    ScheduleInvalid(String),

    #[error("{what}: argument {value} outside the domain ({lo}, {hi})")]
    OutOfDomain {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("{0} is not defined for this parametric regime")]
    RegimeMismatch(&'static str),

    #[error("point ({x}, {t}) is not in a region where this switch can occur")]
    NotInSwitchRegion { x: f64, t: f64 },

    #[error("point ({x}, {t}) lies on a manifold where the value function is not differentiable")]
    OnExcludedManifold { x: f64, t: f64 },

    #[error("{what} has a pole at x = {x}")]
    PoleAtRoot { what: &'static str, x: f64 },

    #[error("invalid integration step {0}")]
    StepInvalid(f64),

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("internal consistency check failed: {0}")]
    InternalConsistency(String),

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
