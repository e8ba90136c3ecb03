//! KL-constrained policy optimization over linear-Gaussian controllers.

pub mod cost;
pub mod dgd;
pub mod forward;
pub mod kl;
pub mod lqg;
pub mod policy;

pub use cost::{
    negative_log_policy, quadratize_cost, LocalQuadratic, QuadraticCostExpansion, QuadraticStep,
    Sequence, StepCost,
};
pub use dgd::{dgd_optimize, DgdOutcome, DualState, DualTrace};
pub use forward::{forward_pass, JointMoments, StateActionMarginals};
pub use kl::{per_step_kl, trajectory_kl};
pub use lqg::lqg_backward;
pub use policy::{LinearGaussianPolicy, PolicyStep};
