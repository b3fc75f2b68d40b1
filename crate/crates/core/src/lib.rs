//! Simulation and analysis of a one-dimensional linear transport equation
//! driven by truncated isotropic α-stable Lévy noise in the Marcus sense.
//!
//! The pathwise solution is a random translate `u(t, x) = u₀(x + σ·Z_t)`;
//! its average solves a deterministic nonlocal equation whose generator is
//! a compensated integral operator with a projected Lévy kernel.

pub mod decay_analysis;
pub mod error;
pub mod io;
pub mod levy_measure;
pub mod nonlocal_operator;
pub mod quadrature;
pub mod stable_noise;
pub mod transport_sim;

pub use error::{Error, Result};
