//! Trajectory KL between two linear-Gaussian policies under shared dynamics.

use super::forward::StateActionMarginals;
use super::policy::LinearGaussianPolicy;
use crate::error::{Error, Result};
use crate::linalg;

/// Per-step `E_{s_t}[KL(π_new(·|s_t) ‖ π_old(·|s_t))]`, states drawn from
/// `marginals` (which should be those of the new policy).
pub fn per_step_kl(
    new_policy: &LinearGaussianPolicy,
    old_policy: &LinearGaussianPolicy,
    marginals: &StateActionMarginals,
) -> Result<Vec<f64>> {
    let horizon = new_policy.horizon();
    if old_policy.horizon() != horizon || marginals.steps.len() != horizon {
        return Err(Error::Dimension(
            "policies and marginals differ in horizon".into(),
        ));
    }
    let (ds, da) = (new_policy.state_dim(), new_policy.action_dim());
    if old_policy.state_dim() != ds || old_policy.action_dim() != da || marginals.state_dim() != ds
    {
        return Err(Error::Dimension(
            "policies and marginals differ in dimension".into(),
        ));
    }
    new_policy
        .steps
        .iter()
        .zip(&old_policy.steps)
        .zip(&marginals.steps)
        .enumerate()
        .map(|(t, ((new, old), m))| {
            let old_chol = linalg::cholesky(
                &old.covariance,
                &format!("old policy covariance at step {t}"),
            )?;
            let new_chol = linalg::cholesky(
                &new.covariance,
                &format!("new policy covariance at step {t}"),
            )?;
            let prec = old_chol.inverse();
            let mu_s = m.state_mean(ds);
            let sigma_s = m.state_covariance(ds);
            let dk = &new.gain - &old.gain;
            let dmean = &dk * &mu_s + (&new.offset - &old.offset);
            let quad =
                dmean.dot(&(&prec * &dmean)) + (dk.transpose() * &prec * &dk * &sigma_s).trace();
            let trace = (&prec * &new.covariance).trace();
            let logdet =
                linalg::log_det_from_cholesky(&old_chol) - linalg::log_det_from_cholesky(&new_chol);
            Ok(0.5 * (trace + quad - da as f64 + logdet))
        })
        .collect()
}

/// Sum over the horizon of the expected per-step action KL.
pub fn trajectory_kl(
    new_policy: &LinearGaussianPolicy,
    old_policy: &LinearGaussianPolicy,
    marginals: &StateActionMarginals,
) -> Result<f64> {
    Ok(per_step_kl(new_policy, old_policy, marginals)?.iter().sum())
}
