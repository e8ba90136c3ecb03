//! Maximum-entropy time-varying LQG backward recursion.

use nalgebra::{DMatrix, DVector};

use super::cost::QuadraticCostExpansion;
use super::policy::{LinearGaussianPolicy, PolicyStep};
use crate::dynfit::LinearGaussianDynamics;
use crate::error::{Error, Result};
use crate::linalg;

/// First Levenberg shift tried when `Q_aa` is not positive definite.
pub const REG_START: f64 = 1e-8;
/// Largest shift tried before giving up.
pub const REG_MAX: f64 = 1e-2;

/// Riccati recursion on linear dynamics and a quadratic cost (no terminal
/// cost). Returns `K_t, k_t` minimizing expected cost and `C_t = Q_aa⁻¹`.
pub fn lqg_backward(
    dynamics: &LinearGaussianDynamics,
    cost: &QuadraticCostExpansion,
) -> Result<LinearGaussianPolicy> {
    let horizon = dynamics.horizon();
    if cost.horizon() != horizon {
        return Err(Error::Dimension(format!(
            "dynamics horizon {horizon} differs from cost horizon {}",
            cost.horizon()
        )));
    }
    let (ds, da) = (dynamics.state_dim(), dynamics.action_dim());
    let mut v_ss = DMatrix::<f64>::zeros(ds, ds);
    let mut v_s = DVector::<f64>::zeros(ds);
    let mut steps = Vec::with_capacity(horizon);
    for t in (0..horizon).rev() {
        let d = &dynamics.steps[t];
        let c = &cost.steps[t];
        if c.c_s.len() != ds || c.c_a.len() != da {
            return Err(Error::Dimension(format!(
                "cost step {t} does not match dynamics dimensions"
            )));
        }
        let vf = &v_ss * &d.f + &v_s;
        let at_v = d.a.transpose() * &v_ss;
        let bt_v = d.b.transpose() * &v_ss;
        let q_ss = &c.c_ss + &at_v * &d.a;
        let q_aa = linalg::symmetrized(&(&c.c_aa + &bt_v * &d.b));
        let q_as = &c.c_sa + &bt_v * &d.a;
        let q_s = &c.c_s + d.a.transpose() * &vf;
        let q_a = &c.c_a + d.b.transpose() * &vf;

        let chol = regularized_cholesky(&q_aa).ok_or_else(|| {
            Error::NotPositiveDefinite(format!(
                "action Hessian at step {t} is not positive definite; increase lambda"
            ))
        })?;
        let gain = -chol.solve(&q_as);
        let offset = -chol.solve(&q_a);
        let mut covariance = chol.inverse();
        linalg::symmetrize(&mut covariance);

        v_ss = &q_ss + q_as.transpose() * &gain;
        linalg::symmetrize(&mut v_ss);
        v_s = &q_s + q_as.transpose() * &offset;
        steps.push(PolicyStep {
            gain,
            offset,
            covariance,
        });
    }
    steps.reverse();
    LinearGaussianPolicy::new(steps)
}

fn regularized_cholesky(q_aa: &DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if q_aa.iter().any(|v| !v.is_finite()) {
        return None;
    }
    if let Some(c) = nalgebra::Cholesky::new(q_aa.clone()) {
        return Some(c);
    }
    let n = q_aa.nrows();
    let mut mu = REG_START;
    while mu <= REG_MAX * (1.0 + 1e-9) {
        if let Some(c) = nalgebra::Cholesky::new(q_aa + DMatrix::identity(n, n) * mu) {
            log::debug!("action Hessian regularized with shift {mu:e}");
            return Some(c);
        }
        mu *= 10.0;
    }
    None
}
