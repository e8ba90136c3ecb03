//! Policy rollouts and trajectory export.

use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::cost::{CostParams, DrivingCost};
use super::scenario::{
    action_from_vector, action_to_vector, advance, observe, reset, Observation, ScenarioSpec, World,
};
use super::vehicle::{ControlAction, VehicleModel, VehicleState};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;
use crate::trajopt::policy::LinearGaussianPolicy;

/// Header of the per-step trajectory CSV.
pub const TRAJECTORY_COLUMNS: [&str; 11] = [
    "t",
    "X",
    "Y",
    "psi",
    "v_x",
    "delta_y",
    "delta_phi",
    "v",
    "a_x",
    "delta_dot",
    "cost",
];

/// One episode. `actions` are the clamped actions actually applied and
/// `costs[t]` is the scenario cost of `(states[t], actions[t])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Observation>,
    pub actions: Vec<ControlAction>,
    pub costs: Vec<f64>,
    pub raw_states: Vec<VehicleState>,
    /// World-frame obstacle position at every state, in obstacle mode.
    pub obstacle_positions: Vec<Option<(f64, f64)>>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn total_cost(&self) -> f64 {
        self.costs.iter().sum()
    }

    pub fn state_vectors(&self) -> Vec<DVector<f64>> {
        self.states.iter().map(Observation::to_vector).collect()
    }

    pub fn action_vectors(&self) -> Vec<DVector<f64>> {
        self.actions.iter().map(action_to_vector).collect()
    }

    /// Write the per-step CSV. The final row holds the terminal state with
    /// the action and cost columns empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(TRAJECTORY_COLUMNS)?;
        for (t, (obs, raw)) in self.states.iter().zip(&self.raw_states).enumerate() {
            let mut row = vec![
                t.to_string(),
                raw.x.to_string(),
                raw.y.to_string(),
                raw.psi.to_string(),
                raw.v_x.to_string(),
                obs.delta_y.to_string(),
                obs.delta_phi.to_string(),
                obs.v.to_string(),
            ];
            match (self.actions.get(t), self.costs.get(t)) {
                (Some(a), Some(c)) => {
                    row.extend([a.a_x.to_string(), a.delta_dot.to_string(), c.to_string()])
                }
                _ => row.extend([String::new(), String::new(), String::new()]),
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A scenario, its vehicle model and cost, with a shared counter of
/// simulated environment steps.
#[derive(Debug)]
pub struct Simulator {
    pub spec: ScenarioSpec,
    pub model: VehicleModel,
    pub cost: DrivingCost,
    steps: AtomicU64,
}

impl Simulator {
    pub fn new(spec: ScenarioSpec, params: CostParams) -> Result<Self> {
        spec.validate()?;
        params.validate()?;
        let cost = DrivingCost::new(&spec, params);
        Ok(Self {
            spec,
            model: VehicleModel::default(),
            cost,
            steps: AtomicU64::new(0),
        })
    }

    /// Environment steps simulated so far.
    pub fn steps_taken(&self) -> u64 {
        self.steps.load(Ordering::Relaxed)
    }

    pub fn reset(&self, seed: u64) -> World {
        reset(&self.spec, seed)
    }

    /// Run `policy` from the reset state of `seed`. With `explore`, actions are
    /// sampled from the policy Gaussian using the seed's noise stream;
    /// otherwise the policy mean is applied.
    pub fn rollout(
        &self,
        policy: &LinearGaussianPolicy,
        seed: u64,
        explore: bool,
    ) -> Result<Trajectory> {
        let spec = &self.spec;
        if policy.horizon() != spec.horizon {
            return Err(Error::Dimension(format!(
                "policy horizon {} differs from scenario horizon {}",
                policy.horizon(),
                spec.horizon
            )));
        }
        if policy.state_dim() != spec.state_dim() || policy.action_dim() != spec.action_dim() {
            return Err(Error::Dimension(format!(
                "policy maps {}-d observations to {}-d actions; scenario needs {} -> {}",
                policy.state_dim(),
                policy.action_dim(),
                spec.state_dim(),
                spec.action_dim()
            )));
        }
        let mut noise = rng::stream(seed, &[rng::NOISE]);
        let mut world = self.reset(seed);
        let horizon = spec.horizon;
        let mut states = Vec::with_capacity(horizon + 1);
        let mut raw_states = Vec::with_capacity(horizon + 1);
        let mut obstacle_positions = Vec::with_capacity(horizon + 1);
        let mut actions = Vec::with_capacity(horizon);
        let mut costs = Vec::with_capacity(horizon);
        for step in &policy.steps {
            let obs = observe(spec, &world);
            let s = obs.to_vector();
            let mut a = step.mean(&s);
            if explore {
                let z = DVector::from_fn(a.len(), |_, _| StandardNormal.sample(&mut noise));
                a += linalg::psd_sqrt(&step.covariance) * z;
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence(format!(
                    "non-finite policy output at step {}",
                    world.step
                )));
            }
            let action = action_from_vector(&a).clamped(&self.model.params);
            costs.push(self.cost.evaluate(&obs, &action));
            states.push(obs);
            raw_states.push(world.vehicle);
            obstacle_positions.push(super::scenario::obstacle_position(spec, &world));
            actions.push(action);
            world = advance(spec, &self.model, &world, &action)?;
            self.steps.fetch_add(1, Ordering::Relaxed);
        }
        states.push(observe(spec, &world));
        raw_states.push(world.vehicle);
        obstacle_positions.push(super::scenario::obstacle_position(spec, &world));
        if let Some(t) = states.iter().position(|o| !o.is_finite()) {
            return Err(Error::Divergence(format!(
                "non-finite observation at step {t}"
            )));
        }
        Ok(Trajectory {
            states,
            actions,
            costs,
            raw_states,
            obstacle_positions,
        })
    }

    /// Rollouts for every seed, in parallel; results keep the seed order.
    pub fn rollouts(
        &self,
        policy: &LinearGaussianPolicy,
        seeds: &[u64],
        explore: bool,
    ) -> Result<Vec<Trajectory>> {
        seeds
            .par_iter()
            .map(|&seed| self.rollout(policy, seed, explore))
            .collect()
    }
}

/// Sample one trajectory of `policy` in `spec` with the default vehicle.
pub fn rollout(
    policy: &LinearGaussianPolicy,
    spec: &ScenarioSpec,
    params: CostParams,
    seed: u64,
) -> Result<Trajectory> {
    Simulator::new(spec.clone(), params)?.rollout(policy, seed, true)
}
