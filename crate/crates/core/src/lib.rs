//! Linear-quadratic mean-field control: exact solvers, Monte Carlo
//! simulators, zeroth-order policy gradient and finite-population baselines.

pub mod analytic;
pub mod cli;
pub mod config;
pub mod error;
pub mod finite;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod simulate;
pub mod svg;
pub mod trace;
pub mod zo;

pub use error::{Error, Result};
pub use linalg::Mat;
pub use model::{ControlParams, MfcModel};
