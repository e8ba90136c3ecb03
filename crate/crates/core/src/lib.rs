//! Guided policy search on a bicycle-model driving simulator.
//!
//! * [`simenv`]: vehicle dynamics, scenarios, observations and costs.
//! * [`dynfit`]: global Gaussian-mixture prior and local dynamics fitting.
//! * [`trajopt`]: KL-constrained LQG policy optimization.
//! * [`gps`]: the outer training loop and PD initialization.
//! * [`cem`]: cross-entropy-method baseline.
//! * [`harness`]: configuration, evaluation, logs and persistence.

// Validations use `!(x > 0.0)` so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cem;
pub mod dynfit;
pub mod error;
pub mod gps;
pub mod harness;
pub mod linalg;
pub mod rng;
pub mod simenv;
pub mod trajopt;

pub use error::{Error, Result};
