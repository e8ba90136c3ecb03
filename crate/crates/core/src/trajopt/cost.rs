//! Quadratic expansions of per-step costs and of the augmented trust-region
//! cost `l(s, a)/λ − log π_old(a | s)`.

use nalgebra::{DMatrix, DVector};

use super::forward::StateActionMarginals;
use super::policy::LinearGaussianPolicy;
use crate::error::{Error, Result};
use crate::linalg;

/// Central-difference step for gradients.
pub const FD_GRADIENT_STEP: f64 = 1e-5;
/// Central-difference step for Hessians.
pub const FD_HESSIAN_STEP: f64 = 1e-4;
/// Eigenvalue floor on the action block of the augmented cost.
pub const ACTION_HESSIAN_FLOOR: f64 = 1e-8;

/// Second-order expansion of a cost around a point `(s̄, ā)`:
/// `l(s̄+δs, ā+δa) ≈ value + l_sᵀδs + l_aᵀδa + ½δsᵀl_ssδs + ½δaᵀl_aaδa + δaᵀl_asδs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalQuadratic {
    pub value: f64,
    pub l_s: DVector<f64>,
    pub l_a: DVector<f64>,
    pub l_ss: DMatrix<f64>,
    pub l_aa: DMatrix<f64>,
    /// Mixed block, `dim(a) × dim(s)`.
    pub l_as: DMatrix<f64>,
}

/// A per-step cost over state and action vectors.
pub trait StepCost: Sync {
    fn eval(&self, s: &DVector<f64>, a: &DVector<f64>) -> f64;

    /// Second-order expansion at `(s, a)`; central differences by default.
    fn expand(&self, s: &DVector<f64>, a: &DVector<f64>) -> LocalQuadratic {
        finite_difference_expansion(self, s, a)
    }
}

impl<F> StepCost for F
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> f64 + Sync,
{
    fn eval(&self, s: &DVector<f64>, a: &DVector<f64>) -> f64 {
        self(s, a)
    }
}

/// Central-difference gradient (step `FD_GRADIENT_STEP`) and Hessian (step
/// `FD_HESSIAN_STEP`) of a scalar function.
pub fn finite_difference_gradient_hessian<F>(f: F, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>)
where
    F: Fn(&DVector<f64>) -> f64,
{
    let n = x.len();
    let shifted = |moves: &[(usize, f64)]| {
        let mut y = x.clone();
        for &(i, d) in moves {
            y[i] += d;
        }
        f(&y)
    };
    let h = FD_GRADIENT_STEP;
    let grad = DVector::from_fn(n, |i, _| {
        (shifted(&[(i, h)]) - shifted(&[(i, -h)])) / (2.0 * h)
    });
    let h = FD_HESSIAN_STEP;
    let f0 = f(x);
    let mut hess = DMatrix::zeros(n, n);
    for i in 0..n {
        hess[(i, i)] = (shifted(&[(i, h)]) - 2.0 * f0 + shifted(&[(i, -h)])) / (h * h);
        for j in 0..i {
            let v = (shifted(&[(i, h), (j, h)])
                - shifted(&[(i, h), (j, -h)])
                - shifted(&[(i, -h), (j, h)])
                + shifted(&[(i, -h), (j, -h)]))
                / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    (grad, hess)
}

/// Expansion of `cost` at `(s, a)` entirely by central differences.
pub fn finite_difference_expansion<C: StepCost + ?Sized>(
    cost: &C,
    s: &DVector<f64>,
    a: &DVector<f64>,
) -> LocalQuadratic {
    let (ds, da) = (s.len(), a.len());
    let joint = DVector::from_iterator(ds + da, s.iter().chain(a.iter()).copied());
    let f = |x: &DVector<f64>| cost.eval(&x.rows(0, ds).into_owned(), &x.rows(ds, da).into_owned());
    let (g, h) = finite_difference_gradient_hessian(f, &joint);
    LocalQuadratic {
        value: cost.eval(s, a),
        l_s: g.rows(0, ds).into_owned(),
        l_a: g.rows(ds, da).into_owned(),
        l_ss: h.view((0, 0), (ds, ds)).into_owned(),
        l_aa: h.view((ds, ds), (da, da)).into_owned(),
        l_as: h.view((ds, 0), (da, ds)).into_owned(),
    }
}

/// A quadratic function of `(s, a)` in absolute coordinates:
/// `½sᵀc_ss s + ½aᵀc_aa a + aᵀc_sa s + c_sᵀs + c_aᵀa + c_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticStep {
    pub c_ss: DMatrix<f64>,
    pub c_aa: DMatrix<f64>,
    /// Mixed block, `dim(a) × dim(s)`.
    pub c_sa: DMatrix<f64>,
    pub c_s: DVector<f64>,
    pub c_a: DVector<f64>,
    pub c_0: f64,
}

impl QuadraticStep {
    pub fn zeros(ds: usize, da: usize) -> Self {
        Self {
            c_ss: DMatrix::zeros(ds, ds),
            c_aa: DMatrix::zeros(da, da),
            c_sa: DMatrix::zeros(da, ds),
            c_s: DVector::zeros(ds),
            c_a: DVector::zeros(da),
            c_0: 0.0,
        }
    }

    /// Re-express a local expansion about `(s̄, ā)` in absolute coordinates.
    pub fn from_local(q: &LocalQuadratic, s: &DVector<f64>, a: &DVector<f64>) -> Self {
        let c_s = &q.l_s - &q.l_ss * s - q.l_as.transpose() * a;
        let c_a = &q.l_a - &q.l_aa * a - &q.l_as * s;
        let c_0 = q.value - q.l_s.dot(s) - q.l_a.dot(a)
            + 0.5 * s.dot(&(&q.l_ss * s))
            + 0.5 * a.dot(&(&q.l_aa * a))
            + a.dot(&(&q.l_as * s));
        Self {
            c_ss: linalg::symmetrized(&q.l_ss),
            c_aa: linalg::symmetrized(&q.l_aa),
            c_sa: q.l_as.clone(),
            c_s,
            c_a,
            c_0,
        }
    }

    pub fn eval(&self, s: &DVector<f64>, a: &DVector<f64>) -> f64 {
        0.5 * s.dot(&(&self.c_ss * s))
            + 0.5 * a.dot(&(&self.c_aa * a))
            + a.dot(&(&self.c_sa * s))
            + self.c_s.dot(s)
            + self.c_a.dot(a)
            + self.c_0
    }

    /// Joint Hessian over `(s, a)`.
    pub fn joint_hessian(&self) -> DMatrix<f64> {
        let (ds, da) = (self.c_s.len(), self.c_a.len());
        let mut h = DMatrix::zeros(ds + da, ds + da);
        h.view_mut((0, 0), (ds, ds)).copy_from(&self.c_ss);
        h.view_mut((ds, ds), (da, da)).copy_from(&self.c_aa);
        h.view_mut((ds, 0), (da, ds)).copy_from(&self.c_sa);
        h.view_mut((0, ds), (ds, da))
            .copy_from(&self.c_sa.transpose());
        h
    }

    fn scale(&self, k: f64) -> Self {
        Self {
            c_ss: &self.c_ss * k,
            c_aa: &self.c_aa * k,
            c_sa: &self.c_sa * k,
            c_s: &self.c_s * k,
            c_a: &self.c_a * k,
            c_0: self.c_0 * k,
        }
    }

    fn add_assign(&mut self, o: &Self) {
        self.c_ss += &o.c_ss;
        self.c_aa += &o.c_aa;
        self.c_sa += &o.c_sa;
        self.c_s += &o.c_s;
        self.c_a += &o.c_a;
        self.c_0 += o.c_0;
    }

    fn is_finite(&self) -> bool {
        self.c_ss
            .iter()
            .chain(self.c_aa.iter())
            .chain(self.c_sa.iter())
            .all(|v| v.is_finite())
            && self
                .c_s
                .iter()
                .chain(self.c_a.iter())
                .all(|v| v.is_finite())
            && self.c_0.is_finite()
    }
}

/// A state sequence (`T` or `T+1` entries) and its `T` actions.
pub type Sequence<'a> = (&'a [DVector<f64>], &'a [DVector<f64>]);

/// Per-step quadratic cost over a horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCostExpansion {
    pub steps: Vec<QuadraticStep>,
}

impl QuadraticCostExpansion {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// Expand `cost` along one state/action sequence (`states` may carry a
    /// trailing final state, which is ignored).
    pub fn along<C: StepCost + ?Sized>(
        cost: &C,
        states: &[DVector<f64>],
        actions: &[DVector<f64>],
    ) -> Result<Self> {
        Self::averaged(cost, &[(states, actions)])
    }

    /// Average of the absolute-coordinate expansions along several sequences.
    pub fn averaged<C: StepCost + ?Sized>(cost: &C, sequences: &[Sequence<'_>]) -> Result<Self> {
        let Some(&(_, first)) = sequences.first() else {
            return Err(Error::InsufficientData("no sequences to expand".into()));
        };
        let horizon = first.len();
        let weight = 1.0 / sequences.len() as f64;
        let mut steps = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let mut acc: Option<QuadraticStep> = None;
            for (states, actions) in sequences {
                if actions.len() != horizon || states.len() < horizon {
                    return Err(Error::Dimension("sequences differ in horizon".into()));
                }
                let q = cost.expand(&states[t], &actions[t]);
                let step = QuadraticStep::from_local(&q, &states[t], &actions[t]).scale(weight);
                if !step.is_finite() {
                    return Err(Error::NonFiniteDerivative { step: t });
                }
                match acc.as_mut() {
                    Some(a) => a.add_assign(&step),
                    None => acc = Some(step),
                }
            }
            steps.push(acc.expect("at least one sequence"));
        }
        Ok(Self { steps })
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            steps: self.steps.iter().map(|s| s.scale(k)).collect(),
        }
    }

    /// Augmented cost `self/λ − log π_old(a|s)` with the action block floored.
    pub fn augmented(&self, lambda: f64, old_policy: &LinearGaussianPolicy) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        if old_policy.horizon() != self.horizon() {
            return Err(Error::Dimension(
                "old policy horizon differs from cost horizon".into(),
            ));
        }
        let trust = negative_log_policy(old_policy)?;
        let steps = self
            .steps
            .iter()
            .zip(&trust.steps)
            .map(|(l, kl)| {
                let mut c = l.scale(1.0 / lambda);
                c.add_assign(kl);
                c.c_aa = linalg::floor_eigenvalues(&c.c_aa, ACTION_HESSIAN_FLOOR);
                c
            })
            .collect();
        Ok(Self { steps })
    }

    /// Expected value under Gaussian state-action marginals.
    pub fn expected_cost(&self, marginals: &StateActionMarginals) -> f64 {
        self.steps
            .iter()
            .zip(&marginals.steps)
            .map(|(c, m)| {
                let h = c.joint_hessian();
                let g =
                    DVector::from_iterator(h.nrows(), c.c_s.iter().chain(c.c_a.iter()).copied());
                0.5 * (&h * &m.covariance).trace()
                    + 0.5 * m.mean.dot(&(&h * &m.mean))
                    + g.dot(&m.mean)
                    + c.c_0
            })
            .sum()
    }
}

/// Exact quadratic `−log N(a; K s + k, C)` for every step of `policy`.
pub fn negative_log_policy(policy: &LinearGaussianPolicy) -> Result<QuadraticCostExpansion> {
    let steps = policy
        .steps
        .iter()
        .enumerate()
        .map(|(t, p)| {
            let chol =
                linalg::cholesky(&p.covariance, &format!("old policy covariance at step {t}"))?;
            let prec = chol.inverse();
            let da = p.offset.len() as f64;
            let pk = &prec * &p.gain;
            let pkv = &prec * &p.offset;
            Ok(QuadraticStep {
                c_ss: linalg::symmetrized(&(p.gain.transpose() * &pk)),
                c_aa: prec.clone(),
                c_sa: -pk,
                c_s: p.gain.transpose() * &pkv,
                c_a: -pkv.clone(),
                c_0: 0.5 * p.offset.dot(&pkv)
                    + 0.5
                        * (linalg::log_det_from_cholesky(&chol)
                            + da * (2.0 * std::f64::consts::PI).ln()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QuadraticCostExpansion { steps })
}

/// Quadratize `cost` about a nominal sequence and augment it with the trust
/// region term of `old_policy` at multiplier `lambda`.
pub fn quadratize_cost<C: StepCost + ?Sized>(
    states: &[DVector<f64>],
    actions: &[DVector<f64>],
    cost: &C,
    lambda: f64,
    old_policy: &LinearGaussianPolicy,
) -> Result<QuadraticCostExpansion> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    QuadraticCostExpansion::along(cost, states, actions)?.augmented(lambda, old_policy)
}
