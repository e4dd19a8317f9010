//! Infection-age structured SIS model with gamma-distributed sojourn times
//! and exponentially waning infectivity.

pub mod error;
pub mod kernels;
pub mod model;
pub mod bifurcation;
pub mod dynamics;
pub mod output;
pub mod parallel;
pub mod pseudospectral;
pub mod reductions;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
