//! Comparator overdrive-delay analysis for constant off-time current-mode control.
//!
//! - [`satcore`]: saturating partial sums and the saturating integral
//! - [`interference`]: line-spectrum interference and its bounds
//! - [`staticmap`]: the static current mapping, the K functionals and the
//!   continuity threshold
//! - [`loopsim`]: cycle simulation, delay bounds, sector estimates and loop iteration
//! - [`cli`]: configuration, subcommands and reports for the `odelay-lab` binary

pub mod cli;
pub mod error;
pub mod interference;
pub mod loopsim;
pub mod satcore;
pub mod staticmap;

pub use error::{Error, Result};
