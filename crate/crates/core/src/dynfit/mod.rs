//! Global mixture prior and per-step linear-Gaussian dynamics fitting.

mod dynamics;
pub mod fit;
pub mod gmm;

pub use dynamics::{DynamicsStep, InitialState, LinearGaussianDynamics};
pub use fit::{
    condition_gaussian, estimate_initial_state, fit_local_dynamics, prediction_error, regression,
    stack_tuple, NiwPrior, PriorStrength, Regression,
};
pub use gmm::{moment_prior, EmStep, GaussianMixture};
