//! PD controller used to initialize both GPS and CEM.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simenv::ScenarioSpec;
use crate::trajopt::{LinearGaussianPolicy, PolicyStep};

/// Gains of `δ̇ = −k_p Δy − k_d Δφ − k_s δ` and `a_x = −k_v (v − v_ref)`.
///
/// `k_s` damps the steering angle; without it the closed loop through the
/// steering integrator has no damping term and oscillates unboundedly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdGains {
    pub kp: f64,
    pub kd: f64,
    pub ks: f64,
    pub kv: f64,
    /// Standard deviation of both action dimensions.
    pub action_std: f64,
}

impl Default for PdGains {
    fn default() -> Self {
        Self {
            kp: 0.5,
            kd: 1.0,
            ks: 4.0,
            kv: 0.8,
            action_std: 0.5,
        }
    }
}

impl PdGains {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.kp, self.kd, self.ks, self.kv]
            .iter()
            .all(|g| g.is_finite());
        if !finite || !(self.action_std > 0.0 && self.action_std.is_finite()) {
            return Err(Error::Config(
                "pd gains must be finite and pd.action_std positive".into(),
            ));
        }
        Ok(())
    }

    /// Mean-action gain and offset for a scenario's observation layout.
    pub fn gain_and_offset(&self, spec: &ScenarioSpec) -> (DMatrix<f64>, DVector<f64>) {
        let mut gain = DMatrix::zeros(spec.action_dim(), spec.state_dim());
        gain[(0, 2)] = -self.kv;
        gain[(1, 0)] = -self.kp;
        gain[(1, 1)] = -self.kd;
        gain[(1, 3)] = -self.ks;
        let offset = DVector::from_vec(vec![self.kv * spec.v_ref, 0.0]);
        (gain, offset)
    }
}

/// Time-invariant PD policy with diagonal covariance `action_std²`.
pub fn init_policy_pd(spec: &ScenarioSpec, gains: &PdGains) -> Result<LinearGaussianPolicy> {
    gains.validate()?;
    let (gain, offset) = gains.gain_and_offset(spec);
    let var = gains.action_std * gains.action_std;
    let covariance = DMatrix::identity(spec.action_dim(), spec.action_dim()) * var;
    LinearGaussianPolicy::time_invariant(
        PolicyStep {
            gain,
            offset,
            covariance,
        },
        spec.horizon,
    )
}
