//! Coupling by change of measure for stochastic delay equations with
//! multiplicative noise: Euler–Maruyama simulation, coupled pairs with
//! Girsanov weights, closed-form Harnack and entropy bounds, and Monte Carlo
//! checks of those bounds.

pub mod bounds;
pub mod cli;
pub mod coefficients;
pub mod config;
pub mod coupling;
pub mod error;
pub mod estimators;
pub mod integrator;
mod linalg;
pub mod rng;
pub mod segment;

pub use error::{Error, Result};
