//! Physics-constrained neural network for one-dimensional consolidation.
//!
//! - [`problem`]: analytic series solution, initial pressure, error norm.
//! - [`autodiff`]: tape-based reverse mode with second-order input jets.
//! - [`model`]: tanh network, `cv = exp(w_cv)`, Adam.
//! - [`data`]: training sets, Latin hypercube collocation, batching.
//! - [`trainer`]: forward and inverse training loops.
//! - [`fd`]: Crank-Nicolson reference solver.
//! - [`config`]: JSON run configuration.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod fd;
pub mod io;
pub mod model;
pub mod problem;
pub mod trainer;

pub use error::{Error, Result};
