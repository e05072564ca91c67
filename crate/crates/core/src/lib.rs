//! Sim-to-real retrieval of layered-media parameters from radar A-scans.
//!
//! A 1D FDTD forward model produces labeled source traces; convolutional
//! regressors are adapted to perturbed target traces by domain-adversarial
//! training, optionally guided by signal reconstruction and run
//! hierarchically in Sobol-sensitivity order.

pub mod arch;
pub mod dataset;
pub mod error;
pub mod fdtd;
pub mod hierarchy;
pub mod metrics;
pub mod nn;
pub mod plot;
pub mod seed;
pub mod signal;
pub mod sobol;
pub mod space;
pub mod train;

pub use error::{Error, Result};
