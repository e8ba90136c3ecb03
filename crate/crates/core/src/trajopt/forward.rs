//! Exact Gaussian moment propagation through a linear-Gaussian chain.

use nalgebra::{DMatrix, DVector};

use super::policy::LinearGaussianPolicy;
use crate::dynfit::{InitialState, LinearGaussianDynamics};
use crate::error::{Error, Result};
use crate::linalg;

/// Largest covariance entry tolerated before declaring divergence.
pub const COVARIANCE_LIMIT: f64 = 1e12;

/// Joint Gaussian over `(s_t, a_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointMoments {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl JointMoments {
    pub fn state_mean(&self, ds: usize) -> DVector<f64> {
        self.mean.rows(0, ds).into_owned()
    }

    pub fn state_covariance(&self, ds: usize) -> DMatrix<f64> {
        self.covariance.view((0, 0), (ds, ds)).into_owned()
    }
}

/// Per-step state-action moments plus the final state distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct StateActionMarginals {
    pub steps: Vec<JointMoments>,
    pub final_state: InitialState,
}

impl StateActionMarginals {
    pub fn state_dim(&self) -> usize {
        self.final_state.mean.len()
    }
}

pub fn forward_pass(
    dynamics: &LinearGaussianDynamics,
    policy: &LinearGaussianPolicy,
    initial: &InitialState,
) -> Result<StateActionMarginals> {
    let horizon = dynamics.horizon();
    if policy.horizon() != horizon {
        return Err(Error::Dimension(format!(
            "policy horizon {} differs from dynamics horizon {horizon}",
            policy.horizon()
        )));
    }
    let (ds, da) = (dynamics.state_dim(), dynamics.action_dim());
    if policy.state_dim() != ds || policy.action_dim() != da || initial.mean.len() != ds {
        return Err(Error::Dimension(
            "policy, dynamics and initial state disagree on dimensions".into(),
        ));
    }
    let mut mu = initial.mean.clone();
    let mut sigma = linalg::symmetrized(&initial.cov);
    let mut steps = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let p = &policy.steps[t];
        let d = &dynamics.steps[t];
        let k_sigma = &p.gain * &sigma;
        let mut joint_cov = DMatrix::zeros(ds + da, ds + da);
        joint_cov.view_mut((0, 0), (ds, ds)).copy_from(&sigma);
        joint_cov.view_mut((ds, 0), (da, ds)).copy_from(&k_sigma);
        joint_cov
            .view_mut((0, ds), (ds, da))
            .copy_from(&k_sigma.transpose());
        joint_cov
            .view_mut((ds, ds), (da, da))
            .copy_from(&(&k_sigma * p.gain.transpose() + &p.covariance));
        linalg::symmetrize(&mut joint_cov);
        let mu_a = p.mean(&mu);
        let joint_mean = DVector::from_iterator(ds + da, mu.iter().chain(mu_a.iter()).copied());

        let mut ab = DMatrix::zeros(ds, ds + da);
        ab.view_mut((0, 0), (ds, ds)).copy_from(&d.a);
        ab.view_mut((0, ds), (ds, da)).copy_from(&d.b);
        mu = &ab * &joint_mean + &d.f;
        sigma = &ab * &joint_cov * ab.transpose() + &d.cov;
        linalg::symmetrize(&mut sigma);
        check_bounded(t, &sigma, &mu)?;
        steps.push(JointMoments {
            mean: joint_mean,
            covariance: joint_cov,
        });
    }
    Ok(StateActionMarginals {
        steps,
        final_state: InitialState {
            mean: mu,
            cov: sigma,
        },
    })
}

fn check_bounded(t: usize, sigma: &DMatrix<f64>, mu: &DVector<f64>) -> Result<()> {
    let magnitude = linalg::max_abs(sigma);
    if !(magnitude <= COVARIANCE_LIMIT) || mu.iter().any(|v| !v.is_finite()) {
        return Err(Error::CovarianceBlowUp { step: t, magnitude });
    }
    Ok(())
}
