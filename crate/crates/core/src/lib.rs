//! Non-isotropic noncentral elliptical QR shape distributions.
//!
//! The crate reduces landmark configurations to QR shape coordinates, evaluates
//! exact shape and size-and-shape densities through zonal-polynomial series,
//! fits isotropic models by maximum likelihood and compares them with a
//! modified BIC. Monte Carlo samplers back the analytic results.

pub mod densities;
pub mod error;
pub mod generators;
pub mod geometry;
pub mod inference;
pub mod logspace;
pub mod quadrature;
pub mod simulate;
pub mod verify;
pub mod zonal;

pub use error::{Result, ShapeError};
