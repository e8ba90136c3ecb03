//! KL-constrained policy optimization by dual gradient descent on λ.

use serde::{Deserialize, Serialize};

use super::cost::QuadraticCostExpansion;
use super::forward::{forward_pass, StateActionMarginals};
use super::kl::trajectory_kl;
use super::lqg::lqg_backward;
use super::policy::LinearGaussianPolicy;
use crate::dynfit::{InitialState, LinearGaussianDynamics};
use crate::error::{Error, Result};

pub const LAMBDA_MIN: f64 = 1e-4;
pub const LAMBDA_MAX: f64 = 1e16;
/// A returned policy is accepted when its KL is at most this multiple of ε.
pub const FEASIBILITY_SLACK: f64 = 1.1;
/// Largest single change of `ln λ` taken outside a bracket.
const MAX_LOG_STEP: f64 = 9.210_340_371_976_184; // ln 1e4

/// Dual variable and DGD settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DualState {
    pub lambda: f64,
    /// KL budget per optimization.
    pub epsilon: f64,
    pub alpha_dual: f64,
    pub max_itr: usize,
    /// Stop once `|KL − ε| ≤ tolerance·ε`.
    pub tolerance: f64,
    /// Use the literal additive update `λ += α(KL − ε)` instead of stepping `ln λ`.
    pub additive: bool,
}

impl Default for DualState {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            epsilon: 1.0,
            alpha_dual: 1.0,
            max_itr: 10,
            tolerance: 0.1,
            additive: false,
        }
    }
}

impl DualState {
    pub fn validate(&self) -> Result<()> {
        if !(LAMBDA_MIN..=LAMBDA_MAX).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "dual.lambda must lie in [{LAMBDA_MIN:e}, {LAMBDA_MAX:e}]"
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config("dual.epsilon must be positive".into()));
        }
        if !(self.alpha_dual > 0.0 && self.alpha_dual.is_finite()) {
            return Err(Error::Config("dual.alpha_dual must be positive".into()));
        }
        if self.max_itr == 0 {
            return Err(Error::Config("dual.max_itr must be at least 1".into()));
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::Config("dual.tolerance must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// One inner DGD iteration. `kl` and `expected_cost` are infinite when the
/// LQG solve or the forward pass failed at this λ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualTrace {
    pub lambda: f64,
    pub kl: f64,
    pub expected_cost: f64,
}

#[derive(Debug, Clone)]
pub struct DgdOutcome {
    pub policy: LinearGaussianPolicy,
    /// Dual state to warm-start the next call (λ of the returned policy).
    pub dual: DualState,
    pub kl: f64,
    /// Expected cost of the returned policy under the fitted model.
    pub expected_cost: f64,
    /// No λ met the constraint; `policy` is the old policy.
    pub constraint_failed: bool,
    pub trace: Vec<DualTrace>,
}

struct Candidate {
    policy: LinearGaussianPolicy,
    lambda: f64,
    kl: f64,
    expected_cost: f64,
}

fn solve_at(
    lambda: f64,
    dynamics: &LinearGaussianDynamics,
    cost: &QuadraticCostExpansion,
    old_policy: &LinearGaussianPolicy,
    initial: &InitialState,
) -> Result<(LinearGaussianPolicy, StateActionMarginals, f64)> {
    let augmented = cost.augmented(lambda, old_policy)?;
    let policy = lqg_backward(dynamics, &augmented)?;
    let marginals = forward_pass(dynamics, &policy, initial)?;
    let kl = trajectory_kl(&policy, old_policy, &marginals)?;
    Ok((policy, marginals, kl))
}

/// Minimize the expected cost of `cost` under `dynamics` subject to
/// `KL(new ‖ old) ≤ ε`, searching λ from `dual.lambda`.
///
/// Outside a bracket λ follows the dual gradient in `ln λ` (or the additive
/// form), extrapolated along the observed log-log KL curve once two points
/// exist. Once λ is bracketed the search switches to safeguarded log-log
/// secant steps. Returns the iterate that met the tolerance; if none did, the
/// lowest-cost iterate with `KL ≤ 1.1·ε`.
pub fn dgd_optimize(
    dynamics: &LinearGaussianDynamics,
    cost: &QuadraticCostExpansion,
    old_policy: &LinearGaussianPolicy,
    initial: &InitialState,
    dual: &DualState,
) -> Result<DgdOutcome> {
    dual.validate()?;
    let eps = dual.epsilon;
    let mut lambda = dual.lambda;
    let mut trace = Vec::with_capacity(dual.max_itr);
    // (ln λ, ln KL − ln ε) for the largest λ seen with KL > ε and the
    // smallest λ seen with KL < ε.
    let mut too_loose: Option<(f64, f64)> = None;
    let mut too_tight: Option<(f64, f64)> = None;
    let mut last: Option<(f64, f64)> = None;
    let mut best: Option<Candidate> = None;
    let mut converged = false;

    for _ in 0..dual.max_itr {
        let x = lambda.ln();
        let solved = solve_at(lambda, dynamics, cost, old_policy, initial);
        let (kl, g) = match solved {
            Ok((policy, marginals, kl)) => {
                let expected_cost = cost.expected_cost(&marginals);
                trace.push(DualTrace {
                    lambda,
                    kl,
                    expected_cost,
                });
                let feasible = kl <= FEASIBILITY_SLACK * eps;
                let done =
                    (kl - eps).abs() <= dual.tolerance * eps || (kl < eps && lambda <= LAMBDA_MIN);
                if feasible
                    && (done
                        || best
                            .as_ref()
                            .is_none_or(|b| expected_cost < b.expected_cost))
                {
                    best = Some(Candidate {
                        policy,
                        lambda,
                        kl,
                        expected_cost,
                    });
                }
                if done {
                    converged = true;
                    break;
                }
                (kl, kl.max(f64::MIN_POSITIVE).ln() - eps.ln())
            }
            Err(Error::NotPositiveDefinite(_) | Error::CovarianceBlowUp { .. }) => {
                trace.push(DualTrace {
                    lambda,
                    kl: f64::INFINITY,
                    expected_cost: f64::INFINITY,
                });
                (f64::INFINITY, f64::INFINITY)
            }
            Err(e) => return Err(e),
        };
        if kl > eps {
            if too_loose.is_none_or(|(xl, _)| x > xl) {
                too_loose = Some((x, g));
            }
        } else if too_tight.is_none_or(|(xt, _)| x < xt) {
            too_tight = Some((x, g));
        }

        let next = match (too_loose, too_tight) {
            (Some((xl, gl)), Some((xt, gt))) => {
                let width = xt - xl;
                let guess = if gl.is_finite() {
                    xl + width * gl / (gl - gt)
                } else {
                    0.5 * (xl + xt)
                };
                guess.clamp(xl + 0.1 * width, xt - 0.1 * width)
            }
            _ => {
                let gradient = if dual.additive {
                    (lambda + dual.alpha_dual * (kl - eps)).max(LAMBDA_MIN).ln() - x
                } else {
                    dual.alpha_dual * (kl - eps) / eps
                };
                let mut step = if gradient.is_finite() {
                    gradient
                } else {
                    MAX_LOG_STEP
                };
                if let Some((xp, gp)) = last.filter(|_| g.is_finite()) {
                    if gp.is_finite() && (x - xp).abs() > 1e-12 {
                        let slope = (g - gp) / (x - xp);
                        let extrapolated = if slope < -1e-3 {
                            -g / slope
                        } else {
                            step.signum() * MAX_LOG_STEP
                        };
                        if extrapolated.signum() == step.signum() && extrapolated.abs() > step.abs()
                        {
                            step = extrapolated;
                        }
                    }
                }
                x + step.clamp(-MAX_LOG_STEP, MAX_LOG_STEP)
            }
        };
        last = Some((x, g));
        let next_lambda = next.exp().clamp(LAMBDA_MIN, LAMBDA_MAX);
        if next_lambda == lambda {
            break;
        }
        lambda = next_lambda;
    }

    let out_dual = |lambda: f64| DualState {
        lambda,
        ..dual.clone()
    };
    match best {
        Some(c) => {
            if !converged {
                log::debug!(
                    "dual search stopped at max_itr with feasible KL {:.4}",
                    c.kl
                );
            }
            Ok(DgdOutcome {
                policy: c.policy,
                dual: out_dual(c.lambda),
                kl: c.kl,
                expected_cost: c.expected_cost,
                constraint_failed: false,
                trace,
            })
        }
        None => {
            log::warn!("dual search found no policy within the KL bound; keeping the old policy");
            let expected_cost = forward_pass(dynamics, old_policy, initial)
                .map(|m| cost.expected_cost(&m))
                .unwrap_or(f64::INFINITY);
            Ok(DgdOutcome {
                policy: old_policy.clone(),
                dual: out_dual(lambda),
                kl: 0.0,
                expected_cost,
                constraint_failed: true,
                trace,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::dynfit::DynamicsStep;
    use crate::trajopt::cost::QuadraticStep;
    use crate::trajopt::policy::PolicyStep;

    struct Problem {
        dynamics: LinearGaussianDynamics,
        cost: QuadraticCostExpansion,
        old: LinearGaussianPolicy,
        initial: InitialState,
    }

    fn problem(seed: u64) -> Problem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ds, da, horizon) = (2, 1, 5);
        let mut u = |scale: f64| rng.random_range(-scale..scale);
        let step = DynamicsStep {
            a: DMatrix::from_fn(ds, ds, |i, j| if i == j { 0.9 } else { 0.0 } + u(0.2)),
            b: DMatrix::from_fn(ds, da, |_, _| u(1.0)),
            f: DVector::from_fn(ds, |_, _| u(0.1)),
            cov: DMatrix::identity(ds, ds) * 0.01,
        };
        let q = QuadraticStep {
            c_ss: DMatrix::identity(ds, ds) * 2.0,
            c_aa: DMatrix::identity(da, da) * 0.2,
            c_sa: DMatrix::zeros(da, ds),
            c_s: DVector::from_fn(ds, |_, _| u(1.0)),
            c_a: DVector::from_fn(da, |_, _| u(1.0)),
            c_0: 0.0,
        };
        let old_step = PolicyStep {
            gain: DMatrix::from_fn(da, ds, |_, _| u(0.1)),
            offset: DVector::zeros(da),
            covariance: DMatrix::identity(da, da) * 0.5,
        };
        Problem {
            dynamics: LinearGaussianDynamics::time_invariant(step, horizon).unwrap(),
            cost: QuadraticCostExpansion {
                steps: vec![q; horizon],
            },
            old: LinearGaussianPolicy::time_invariant(old_step, horizon).unwrap(),
            initial: InitialState {
                mean: DVector::from_element(ds, 1.0),
                cov: DMatrix::identity(ds, ds) * 0.05,
            },
        }
    }

    fn run(p: &Problem, dual: &DualState) -> DgdOutcome {
        dgd_optimize(&p.dynamics, &p.cost, &p.old, &p.initial, dual).unwrap()
    }

    fn max_gain_diff(a: &LinearGaussianPolicy, b: &LinearGaussianPolicy) -> f64 {
        a.steps
            .iter()
            .zip(&b.steps)
            .map(|(x, y)| {
                (&x.gain - &y.gain)
                    .amax()
                    .max((&x.offset - &y.offset).amax())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn loose_bound_reduces_to_plain_lqg() {
        for seed in 0..5 {
            let p = problem(seed);
            let out = run(
                &p,
                &DualState {
                    epsilon: 1e9,
                    ..DualState::default()
                },
            );
            assert!(!out.constraint_failed);
            assert_eq!(out.dual.lambda, LAMBDA_MIN);
            let plain = lqg_backward(&p.dynamics, &p.cost).unwrap();
            let scale = plain
                .steps
                .iter()
                .map(|s| s.gain.amax().max(s.offset.amax()))
                .fold(1.0, f64::max);
            assert!(
                max_gain_diff(&out.policy, &plain) < 1e-3 * scale,
                "seed {seed}"
            );
        }
    }

    #[test]
    fn vanishing_bound_keeps_old_policy() {
        for seed in 0..5 {
            let p = problem(seed);
            let eps = 1e-8;
            let out = run(
                &p,
                &DualState {
                    epsilon: eps,
                    max_itr: 30,
                    ..DualState::default()
                },
            );
            assert!(
                out.kl <= FEASIBILITY_SLACK * eps,
                "seed {seed}: kl {}",
                out.kl
            );
            assert!(max_gain_diff(&out.policy, &p.old) < 1e-3, "seed {seed}");
        }
    }

    #[test]
    fn success_satisfies_constraint() {
        for seed in 0..10 {
            let p = problem(seed);
            for eps in [0.05, 0.5, 2.0] {
                let out = run(
                    &p,
                    &DualState {
                        epsilon: eps,
                        ..DualState::default()
                    },
                );
                assert!(!out.constraint_failed, "seed {seed} eps {eps}");
                let marginals = forward_pass(&p.dynamics, &out.policy, &p.initial).unwrap();
                let kl = trajectory_kl(&out.policy, &p.old, &marginals).unwrap();
                assert!((kl - out.kl).abs() <= 1e-12 * kl.max(1.0));
                assert!(kl <= FEASIBILITY_SLACK * eps);
                assert_eq!(out.expected_cost, p.cost.expected_cost(&marginals));
            }
        }
    }

    #[test]
    fn kl_is_non_increasing_in_lambda() {
        for seed in 0..10 {
            let p = problem(seed);
            let out = run(
                &p,
                &DualState {
                    epsilon: 0.3,
                    tolerance: 1e-3,
                    max_itr: 25,
                    ..DualState::default()
                },
            );
            let mut points: Vec<(f64, f64)> = out.trace.iter().map(|t| (t.lambda, t.kl)).collect();
            assert!(points.len() >= 2);
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            for w in points.windows(2) {
                assert!(w[1].1 <= w[0].1 * (1.0 + 1e-9), "seed {seed}: {w:?}");
            }
        }
    }

    #[test]
    fn constant_cost_shift_changes_no_gain() {
        let p = problem(3);
        let mut shifted = QuadraticCostExpansion {
            steps: p.cost.steps.clone(),
        };
        for s in &mut shifted.steps {
            s.c_0 += 7.5;
        }
        let dual = DualState {
            epsilon: 0.4,
            ..DualState::default()
        };
        let a = run(&p, &dual);
        let b = dgd_optimize(&p.dynamics, &shifted, &p.old, &p.initial, &dual).unwrap();
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.dual.lambda, b.dual.lambda);
    }

    #[test]
    fn infeasible_search_returns_old_policy() {
        let p = problem(1);
        let out = run(
            &p,
            &DualState {
                epsilon: 1e-9,
                max_itr: 1,
                ..DualState::default()
            },
        );
        assert!(out.constraint_failed);
        assert_eq!(out.policy, p.old);
        assert_eq!(out.trace.len(), 1);
    }

    #[test]
    fn additive_update_also_converges() {
        let p = problem(2);
        let out = run(
            &p,
            &DualState {
                epsilon: 0.5,
                additive: true,
                max_itr: 20,
                ..DualState::default()
            },
        );
        assert!(!out.constraint_failed);
        assert!(out.kl <= FEASIBILITY_SLACK * 0.5);
    }

    #[test]
    fn invalid_dual_state_rejected() {
        let p = problem(0);
        for bad in [
            DualState {
                lambda: 0.0,
                ..DualState::default()
            },
            DualState {
                epsilon: -1.0,
                ..DualState::default()
            },
            DualState {
                max_itr: 0,
                ..DualState::default()
            },
            DualState {
                tolerance: 1.0,
                ..DualState::default()
            },
        ] {
            assert!(matches!(
                dgd_optimize(&p.dynamics, &p.cost, &p.old, &p.initial, &bad),
                Err(Error::Config(_))
            ));
        }
    }
}
