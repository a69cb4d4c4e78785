//! Spectral propagation of probability densities for stochastic hybrid
//! systems evolving on SO(3) x T^2.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod continuous;
pub mod discrete;
pub mod error;
pub mod fisher;
pub mod harmonic;
pub mod model;
pub mod montecarlo;
pub mod pendulum;
pub mod so3;
pub mod splitting;
pub mod stats;

pub use error::{Error, Result};
