//! Per-step linear-Gaussian dynamics from a few rollouts, regularized by a
//! normal-inverse-Wishart prior whose moments come from the global mixture.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::dynamics::{DynamicsStep, InitialState, LinearGaussianDynamics};
use super::gmm::{moment_prior, GaussianMixture};
use crate::error::{Error, Result};
use crate::linalg;

/// Ridge added to the conditioning block before inversion.
pub const CONDITIONING_RIDGE: f64 = 1e-6;
/// Eigenvalue floor on the fitted dynamics covariance.
pub const DYNAMICS_COVARIANCE_FLOOR: f64 = 1e-8;

/// NIW hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NiwPrior {
    pub mu0: DVector<f64>,
    pub phi: DMatrix<f64>,
    /// Mean strength (pseudo-observations behind `mu0`).
    pub m: f64,
    /// Degrees of freedom.
    pub n0: f64,
}

/// Prior strength; `n0 = None` means `d + 2` for tuple dimension `d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorStrength {
    pub m: f64,
    pub n0: Option<f64>,
}

impl Default for PriorStrength {
    fn default() -> Self {
        Self { m: 1.0, n0: None }
    }
}

impl PriorStrength {
    pub fn n0_for(&self, d: usize) -> f64 {
        self.n0.unwrap_or(d as f64 + 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m > 0.0 && self.m.is_finite()) {
            return Err(Error::Config("prior.m must be positive".into()));
        }
        if let Some(n0) = self.n0 {
            if !(n0 > 0.0 && n0.is_finite()) {
                return Err(Error::Config("prior.n0 must be positive".into()));
            }
        }
        Ok(())
    }
}

impl NiwPrior {
    /// Prior centred on `(mu0, sigma)` with `Phi = n0·sigma`.
    pub fn from_moments(
        mu0: DVector<f64>,
        sigma: &DMatrix<f64>,
        strength: PriorStrength,
    ) -> Result<Self> {
        let d = mu0.len();
        let prior = Self {
            phi: sigma * strength.n0_for(d),
            mu0,
            m: strength.m,
            n0: strength.n0_for(d),
        };
        prior.validate()?;
        Ok(prior)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.mu0.len();
        if !(self.m > 0.0) {
            return Err(Error::InvalidArgument(
                "NIW mean strength m must be positive".into(),
            ));
        }
        if !(self.n0 > d as f64 - 1.0) {
            return Err(Error::InvalidArgument(format!(
                "NIW degrees of freedom must exceed {}",
                d as f64 - 1.0
            )));
        }
        linalg::cholesky(&self.phi, "NIW scale matrix")?;
        Ok(())
    }

    /// Posterior mean and covariance given the empirical moments of `n` samples
    /// (`sample_cov` with 1/n normalization).
    pub fn posterior(
        &self,
        n: f64,
        sample_mean: &DVector<f64>,
        sample_cov: &DMatrix<f64>,
    ) -> (DVector<f64>, DMatrix<f64>) {
        let mean = (&self.mu0 * self.m + sample_mean * n) / (self.m + n);
        let diff = sample_mean - &self.mu0;
        let mut scatter = &self.phi + sample_cov * n;
        scatter.ger(n * self.m / (n + self.m), &diff, &diff, 1.0);
        let mut cov = scatter / (n + self.n0);
        linalg::symmetrize(&mut cov);
        (mean, cov)
    }
}

/// Affine-Gaussian regression `y | x ~ N(gain·x + offset, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Regression {
    pub gain: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Regression form of conditioning a joint Gaussian over `(x, y)` on its
/// first `x_dim` coordinates. `ridge` is added to the x-block.
pub fn regression(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    x_dim: usize,
    ridge: f64,
) -> Result<Regression> {
    let d = mean.len();
    if cov.shape() != (d, d) || x_dim == 0 || x_dim >= d {
        return Err(Error::Dimension(format!(
            "cannot condition a {d}-dimensional Gaussian on {x_dim} coordinates"
        )));
    }
    let y_dim = d - x_dim;
    let sxx =
        cov.view((0, 0), (x_dim, x_dim)).into_owned() + DMatrix::identity(x_dim, x_dim) * ridge;
    let syx = cov.view((x_dim, 0), (y_dim, x_dim)).into_owned();
    let syy = cov.view((x_dim, x_dim), (y_dim, y_dim)).into_owned();
    let chol = linalg::cholesky(&sxx, "conditioning block")?;
    let gain = chol.solve(&syx.transpose()).transpose();
    let offset = mean.rows(x_dim, y_dim) - &gain * mean.rows(0, x_dim);
    let mut cond = syy - &gain * syx.transpose();
    linalg::symmetrize(&mut cond);
    Ok(Regression {
        gain,
        offset,
        cov: cond,
    })
}

/// Moments of `y | x = x_value` for a joint Gaussian over `(x, y)`.
pub fn condition_gaussian(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    x_value: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let r = regression(mean, cov, x_value.len(), 0.0)?;
    Ok((&r.gain * x_value + &r.offset, r.cov))
}

/// Stack `(s, a, s')` into one tuple vector.
pub fn stack_tuple(s: &DVector<f64>, a: &DVector<f64>, next: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        s.len() + a.len() + next.len(),
        s.iter().chain(a.iter()).chain(next.iter()).copied(),
    )
}

/// Fit `s_{t+1} ~ N(A_t s_t + B_t a_t + f_t, F_t)` at every step from
/// `states[i][t]` (`T+1` per rollout) and `actions[i][t]` (`T` per rollout).
///
/// With `gmm`, each step's empirical moments are combined with an NIW prior
/// built from the mixture's moments at that step; without it the fit is the
/// maximum-likelihood regression.
pub fn fit_local_dynamics(
    states: &[Vec<DVector<f64>>],
    actions: &[Vec<DVector<f64>>],
    gmm: Option<&GaussianMixture>,
    strength: PriorStrength,
) -> Result<LinearGaussianDynamics> {
    if states.len() < 2 || states.len() != actions.len() {
        return Err(Error::InsufficientData(
            "need at least two rollouts with states and actions".into(),
        ));
    }
    let horizon = actions[0].len();
    if horizon == 0
        || actions.iter().any(|a| a.len() != horizon)
        || states.iter().any(|s| s.len() != horizon + 1)
    {
        return Err(Error::Dimension(
            "rollouts must share one horizon with T+1 states and T actions".into(),
        ));
    }
    let (ds, da) = (states[0][0].len(), actions[0][0].len());
    let d = 2 * ds + da;
    if let Some(g) = gmm {
        if g.dim() != d {
            return Err(Error::Dimension(format!(
                "mixture dimension {} differs from tuple dimension {d}",
                g.dim()
            )));
        }
    }
    strength.validate()?;
    let n = states.len() as f64;
    if gmm.is_none() && states.len() <= ds + da {
        return Err(Error::InsufficientData(format!(
            "{} rollouts cannot determine a {}-input regression without a prior; add a prior or raise its strength",
            states.len(),
            ds + da
        )));
    }
    let steps = (0..horizon)
        .map(|t| {
            let tuples: Vec<DVector<f64>> = states
                .iter()
                .zip(actions)
                .map(|(s, a)| stack_tuple(&s[t], &a[t], &s[t + 1]))
                .collect();
            let (mean, cov) = linalg::mean_and_covariance(&tuples);
            let (mean, cov) = match gmm {
                Some(g) => {
                    let (mu0, sigma) = moment_prior(g, &tuples)?;
                    NiwPrior::from_moments(mu0, &sigma, strength)?.posterior(n, &mean, &cov)
                }
                None => (mean, cov),
            };
            let r = regression(&mean, &cov, ds + da, CONDITIONING_RIDGE).map_err(|e| match e {
                Error::NotPositiveDefinite(_) => Error::InsufficientData(format!(
                    "degenerate dynamics posterior at step {t}; raise the prior strength"
                )),
                other => other,
            })?;
            Ok(DynamicsStep {
                a: r.gain.columns(0, ds).into_owned(),
                b: r.gain.columns(ds, da).into_owned(),
                f: r.offset,
                cov: linalg::floor_eigenvalues(&r.cov, DYNAMICS_COVARIANCE_FLOOR),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LinearGaussianDynamics::new(steps)
}

/// Empirical initial-state Gaussian with its covariance floored.
pub fn estimate_initial_state(states: &[Vec<DVector<f64>>], floor: f64) -> Result<InitialState> {
    if states.is_empty() || states.iter().any(|s| s.is_empty()) {
        return Err(Error::InsufficientData("no initial states".into()));
    }
    let first: Vec<DVector<f64>> = states.iter().map(|s| s[0].clone()).collect();
    let (mean, cov) = linalg::mean_and_covariance(&first);
    Ok(InitialState {
        mean,
        cov: linalg::floor_eigenvalues(&cov, floor),
    })
}

/// Mean squared one-step prediction error of `dynamics` on the given rollouts.
pub fn prediction_error(
    dynamics: &LinearGaussianDynamics,
    states: &[Vec<DVector<f64>>],
    actions: &[Vec<DVector<f64>>],
) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (s, a) in states.iter().zip(actions) {
        for (t, step) in dynamics.steps.iter().enumerate() {
            total += (step.mean(&s[t], &a[t]) - &s[t + 1]).norm_squared();
            count += 1;
        }
    }
    total / count.max(1) as f64
}
