//! Uncertainty-aware saddle searches: nudged elastic band and dimer
//! optimizers driven by stochastic force oracles with calibrated covariance,
//! plus the benchmark harness used to evaluate them.

pub mod bench;
pub mod covariance;
pub mod dimer;
pub mod error;
pub mod linalg;
pub mod neb;
pub mod potentials;
pub mod rng;

pub use error::{Error, Result};
