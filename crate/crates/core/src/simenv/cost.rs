//! Tracking and front-vehicle costs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::scenario::{action_from_vector, Observation, ScenarioSpec, LANE_WIDTH};
use super::vehicle::ControlAction;
use crate::error::{Error, Result};
use crate::trajopt::cost::{finite_difference_gradient_hessian, LocalQuadratic, StepCost};

/// Distance below which the front-vehicle cost is active, m.
pub const TRIGGER_DISTANCE: f64 = 20.0;
/// Default support of the lane weight, m. Wider than half a lane so that any
/// lateral overlap with the front vehicle stays costly.
pub const DEFAULT_LANE_WEIGHT_WIDTH: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostParams {
    pub alpha_l: f64,
    pub alpha_y: f64,
    pub alpha_v: f64,
    pub alpha_a: f64,
    pub alpha_sigma: f64,
    pub beta_s: f64,
    pub beta_v: f64,
    pub trigger_distance: f64,
    /// Lateral gap, m, at which the front-vehicle cost fades to zero.
    pub lane_weight_width: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            alpha_l: 1.0,
            alpha_y: 1.0,
            alpha_v: 0.5,
            alpha_a: 0.1,
            alpha_sigma: 0.1,
            beta_s: 1.0,
            beta_v: 1.0,
            trigger_distance: TRIGGER_DISTANCE,
            lane_weight_width: DEFAULT_LANE_WEIGHT_WIDTH,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("alpha_l", self.alpha_l),
            ("alpha_y", self.alpha_y),
            ("alpha_v", self.alpha_v),
            ("alpha_a", self.alpha_a),
            ("alpha_sigma", self.alpha_sigma),
            ("beta_s", self.beta_s),
            ("beta_v", self.beta_v),
        ];
        for (name, w) in weights {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Config(format!(
                    "cost.{name} must be a non-negative number, got {w}"
                )));
            }
        }
        if self.trigger_distance != TRIGGER_DISTANCE {
            return Err(Error::Config(format!(
                "cost.trigger_distance is fixed at {TRIGGER_DISTANCE}, got {}",
                self.trigger_distance
            )));
        }
        if !(self.lane_weight_width > 0.0 && self.lane_weight_width <= LANE_WIDTH) {
            return Err(Error::Config(format!(
                "cost.lane_weight_width must lie in (0, {LANE_WIDTH}], got {}",
                self.lane_weight_width
            )));
        }
        Ok(())
    }
}

/// `α_l Δy² + α_y Δφ² + α_v (v − v_ref)² + α_a a² + α_σ σ²` with `σ = δ̇`.
pub fn tracking_cost(obs: &Observation, action: &ControlAction, p: &CostParams, v_ref: f64) -> f64 {
    p.alpha_l * obs.delta_y.powi(2)
        + p.alpha_y * obs.delta_phi.powi(2)
        + p.alpha_v * (obs.v - v_ref).powi(2)
        + p.alpha_a * action.a_x.powi(2)
        + p.alpha_sigma * action.delta_dot.powi(2)
}

/// Smooth lane-membership weight: 1 when the two vehicles are laterally
/// aligned, decaying to exactly 0 at a lateral gap of `width`.
pub fn lane_weight(lateral_gap: f64, width: f64) -> f64 {
    let u = lateral_gap / width;
    if u.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - u * u).powi(2)
    }
}

/// Front-vehicle cost `β_s (20 − s) + β_v max(v − v_front, 0)` while the gap
/// is under the trigger distance, scaled by the lane weight of the lateral
/// gap (1 when aligned, 0 in the adjacent lane).
pub fn obstacle_cost(obs: &Observation, p: &CostParams) -> f64 {
    let Some(o) = obs.obstacle else { return 0.0 };
    if o.s_rel >= p.trigger_distance {
        return 0.0;
    }
    lane_weight(o.lateral_gap, p.lane_weight_width)
        * (p.beta_s * (p.trigger_distance - o.s_rel) + p.beta_v * (obs.v - o.v_front).max(0.0))
}

/// The per-step cost of a scenario, in vector form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrivingCost {
    pub params: CostParams,
    pub v_ref: f64,
    /// Lateral offset of the front vehicle from the path, in obstacle mode.
    pub obstacle_offset: Option<f64>,
}

impl DrivingCost {
    pub fn new(spec: &ScenarioSpec, params: CostParams) -> Self {
        Self {
            params,
            v_ref: spec.v_ref,
            obstacle_offset: spec.obstacle.map(|o| o.path_offset()),
        }
    }

    pub fn evaluate(&self, obs: &Observation, action: &ControlAction) -> f64 {
        tracking_cost(obs, action, &self.params, self.v_ref) + obstacle_cost(obs, &self.params)
    }

    /// Analytic expansion of the quadratic tracking term.
    pub fn tracking_expansion(&self, s: &DVector<f64>, a: &DVector<f64>) -> LocalQuadratic {
        let p = &self.params;
        let ds = s.len();
        let obs = Observation::from_vector(s, self.obstacle_offset);
        let action = action_from_vector(a);
        let mut l_s = DVector::zeros(ds);
        let mut l_ss = DMatrix::zeros(ds, ds);
        let state_weights = [
            (0, p.alpha_l, s[0]),
            (1, p.alpha_y, s[1]),
            (2, p.alpha_v, s[2] - self.v_ref),
        ];
        for (i, w, e) in state_weights {
            l_s[i] = 2.0 * w * e;
            l_ss[(i, i)] = 2.0 * w;
        }
        LocalQuadratic {
            value: tracking_cost(&obs, &action, p, self.v_ref),
            l_s,
            l_a: DVector::from_vec(vec![2.0 * p.alpha_a * a[0], 2.0 * p.alpha_sigma * a[1]]),
            l_ss,
            l_aa: DMatrix::from_diagonal(&DVector::from_vec(vec![
                2.0 * p.alpha_a,
                2.0 * p.alpha_sigma,
            ])),
            l_as: DMatrix::zeros(a.len(), ds),
        }
    }

    fn obstacle_value(&self, s: &DVector<f64>) -> f64 {
        obstacle_cost(
            &Observation::from_vector(s, self.obstacle_offset),
            &self.params,
        )
    }
}

impl StepCost for DrivingCost {
    fn eval(&self, s: &DVector<f64>, a: &DVector<f64>) -> f64 {
        self.evaluate(
            &Observation::from_vector(s, self.obstacle_offset),
            &action_from_vector(a),
        )
    }

    /// Tracking derivatives are exact; the front-vehicle term is
    /// differentiated by central differences in the state.
    fn expand(&self, s: &DVector<f64>, a: &DVector<f64>) -> LocalQuadratic {
        let mut q = self.tracking_expansion(s, a);
        if self.obstacle_offset.is_some() {
            let value = self.obstacle_value(s);
            let (grad, hess) = finite_difference_gradient_hessian(|x| self.obstacle_value(x), s);
            q.value += value;
            q.l_s += grad;
            q.l_ss += hess;
        }
        q
    }
}
