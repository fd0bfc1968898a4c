//! CMA-ES with Gaussian-process evolution control.
//!
//! The search distribution lives in [`cma`], the surrogate model in [`gp`],
//! the point-selection criteria in [`acquisition`] and the strategies that
//! decide which points get truly evaluated in [`control`]. [`benchmark`]
//! runs configured experiments on standard test functions.

pub mod acquisition;
pub mod benchmark;
pub mod cma;
pub mod config;
pub mod control;
mod error;
pub mod gp;

pub use error::{Error, Result};
