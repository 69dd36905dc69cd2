use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("tabulated probability queried at x = {x} outside table range [{lo}, {hi}]")]
    Extrapolation { x: f64, lo: f64, hi: f64 },

    #[error("enumeration too large: {what} = {value} exceeds limit {limit}")]
    TooLarge {
        what: &'static str,
        value: usize,
        limit: usize,
    },

    #[error("mass violation: total mass {mass} deviates from 1 by more than {tol}")]
    MassViolation { mass: f64, tol: f64 },

    #[error("time step underflow: dt = {dt} (|c| = {c})")]
    StepSize { dt: f64, c: f64 },

    #[error("parabolicity lost: {0}")]
    Parabolicity(String),

    #[error("degenerate initial data: {0}")]
    DegenerateInitialData(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field,
        reason: reason.into(),
    }
}
