use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error(
        "rejection sampler saturated: {max_rejects} consecutive increments over dt = {dt} exceeded \
         the jump cutoff {cutoff}; the time step is too large for truncation by rejection"
    )]
    RejectionSaturated {
        max_rejects: usize,
        dt: f64,
        cutoff: f64,
    },

    #[error("quadrature on [{a}, {b}] did not reach tolerance {tolerance:e} (error estimate {estimate:e})")]
    QuadratureFailed {
        a: f64,
        b: f64,
        tolerance: f64,
        estimate: f64,
    },

    #[error("non-finite operator value from the {region} sub-interval at x = {x}")]
    NonFinite { region: &'static str, x: f64 },

    #[error("point {value} is not on the {what} grid")]
    OffGrid { what: &'static str, value: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error(
        "explicit scheme unstable at t = {time}: max |U| = {max_abs:e} exceeds {limit:e} \
         (dt = {dt:e}, stability bound {bound:e})"
    )]
    Unstable {
        time: f64,
        max_abs: f64,
        limit: f64,
        dt: f64,
        bound: f64,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
