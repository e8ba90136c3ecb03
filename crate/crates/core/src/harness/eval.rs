//! Deterministic policy evaluation and failure metrics.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simenv::{ScenarioSpec, Simulator, Trajectory, LANE_WIDTH};
use crate::trajopt::LinearGaussianPolicy;

/// Along-path distance to a same-lane front vehicle that counts as a collision, m.
pub const COLLISION_DISTANCE: f64 = 4.0;
/// Lateral deviation beyond which the vehicle has left the road, m.
pub const OFF_ROAD_DEVIATION: f64 = LANE_WIDTH;

/// Header of `eval_summary.csv`.
pub const EVAL_COLUMNS: [&str; 8] = [
    "rollout",
    "seed",
    "total_cost",
    "mean_abs_delta_y",
    "mean_abs_delta_phi",
    "mean_abs_speed_error",
    "collision",
    "off_road",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutMetrics {
    pub seed: u64,
    pub total_cost: f64,
    pub mean_abs_delta_y: f64,
    pub mean_abs_delta_phi: f64,
    pub mean_abs_speed_error: f64,
    /// A same-lane front vehicle came within `COLLISION_DISTANCE` at some step.
    pub collision: bool,
    /// `|Δy|` exceeded `OFF_ROAD_DEVIATION` at some step.
    pub off_road: bool,
}

impl RolloutMetrics {
    /// Metrics over every recorded state, terminal state included.
    pub fn from_trajectory(traj: &Trajectory, v_ref: f64, seed: u64) -> Self {
        let n = traj.states.len().max(1) as f64;
        let mean = |f: &dyn Fn(&crate::simenv::Observation) -> f64| {
            traj.states.iter().map(f).sum::<f64>() / n
        };
        Self {
            seed,
            total_cost: traj.total_cost(),
            mean_abs_delta_y: mean(&|o| o.delta_y.abs()),
            mean_abs_delta_phi: mean(&|o| o.delta_phi.abs()),
            mean_abs_speed_error: mean(&|o| (o.v - v_ref).abs()),
            collision: traj.states.iter().any(|o| {
                o.obstacle
                    .is_some_and(|f| f.same_lane && f.s_rel.abs() < COLLISION_DISTANCE)
            }),
            off_road: traj
                .states
                .iter()
                .any(|o| o.delta_y.abs() > OFF_ROAD_DEVIATION),
        }
    }

    /// Neither collided nor left the road.
    pub fn clean(&self) -> bool {
        !self.collision && !self.off_road
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rollouts: Vec<RolloutMetrics>,
    pub mean_total_cost: f64,
    pub mean_abs_delta_y: f64,
    pub mean_abs_delta_phi: f64,
    pub mean_abs_speed_error: f64,
    pub collisions: usize,
    pub off_road: usize,
}

impl EvalReport {
    pub fn from_rollouts(rollouts: Vec<RolloutMetrics>) -> Result<Self> {
        if rollouts.is_empty() {
            return Err(Error::InvalidArgument(
                "evaluation needs at least one rollout".into(),
            ));
        }
        let n = rollouts.len() as f64;
        let mean = |f: fn(&RolloutMetrics) -> f64| rollouts.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            mean_total_cost: mean(|r| r.total_cost),
            mean_abs_delta_y: mean(|r| r.mean_abs_delta_y),
            mean_abs_delta_phi: mean(|r| r.mean_abs_delta_phi),
            mean_abs_speed_error: mean(|r| r.mean_abs_speed_error),
            collisions: rollouts.iter().filter(|r| r.collision).count(),
            off_road: rollouts.iter().filter(|r| r.off_road).count(),
            rollouts,
        })
    }

    /// Rollouts with neither failure.
    pub fn clean(&self) -> usize {
        self.rollouts.iter().filter(|r| r.clean()).count()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(EVAL_COLUMNS)?;
        for (i, r) in self.rollouts.iter().enumerate() {
            w.write_record([
                i.to_string(),
                r.seed.to_string(),
                r.total_cost.to_string(),
                r.mean_abs_delta_y.to_string(),
                r.mean_abs_delta_phi.to_string(),
                r.mean_abs_speed_error.to_string(),
                r.collision.to_string(),
                r.off_road.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean-action rollouts of `policy` from each reset seed.
pub fn evaluate(
    sim: &Simulator,
    policy: &LinearGaussianPolicy,
    seeds: &[u64],
) -> Result<(EvalReport, Vec<Trajectory>)> {
    let trajectories = sim.rollouts(policy, seeds, false)?;
    let metrics = trajectories
        .iter()
        .zip(seeds)
        .map(|(t, &s)| RolloutMetrics::from_trajectory(t, sim.spec.v_ref, s))
        .collect();
    Ok((EvalReport::from_rollouts(metrics)?, trajectories))
}

/// Check that `policy` fits `spec` before simulating.
pub fn check_policy(policy: &LinearGaussianPolicy, spec: &ScenarioSpec) -> Result<()> {
    if policy.state_dim() != spec.state_dim() || policy.action_dim() != spec.action_dim() {
        let mode = if spec.has_obstacle() {
            "with"
        } else {
            "without"
        };
        return Err(Error::Dimension(format!(
            "checkpoint maps {}-d observations to {}-d actions, but the {} scenario {mode} obstacle uses {} -> {}",
            policy.state_dim(),
            policy.action_dim(),
            spec.kind,
            spec.state_dim(),
            spec.action_dim()
        )));
    }
    if policy.horizon() != spec.horizon {
        return Err(Error::Dimension(format!(
            "checkpoint horizon {} differs from scenario horizon {}",
            policy.horizon(),
            spec.horizon
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gps::{init_policy_pd, PdGains};
    use crate::simenv::{CostParams, Observation, ObstacleObservation, ScenarioKind, VehicleState};

    fn obs(delta_y: f64, v: f64, obstacle: Option<ObstacleObservation>) -> Observation {
        Observation {
            delta_y,
            delta_phi: -0.1,
            v,
            steer: 0.0,
            obstacle,
        }
    }

    fn traj(states: Vec<Observation>) -> Trajectory {
        let n = states.len();
        Trajectory {
            states,
            actions: Vec::new(),
            costs: vec![1.0, 2.0],
            raw_states: vec![VehicleState::default(); n],
            obstacle_positions: vec![None; n],
        }
    }

    #[test]
    fn metrics_average_every_state() {
        let t = traj(vec![obs(1.0, 4.0, None), obs(-3.0, 7.0, None)]);
        let m = RolloutMetrics::from_trajectory(&t, 5.0, 9);
        assert_eq!(m.total_cost, 3.0);
        assert_eq!(m.mean_abs_delta_y, 2.0);
        assert!((m.mean_abs_delta_phi - 0.1).abs() < 1e-15);
        assert_eq!(m.mean_abs_speed_error, 1.5);
        assert!(!m.collision && !m.off_road && m.clean());
    }

    #[test]
    fn off_road_threshold() {
        assert!(
            !RolloutMetrics::from_trajectory(&traj(vec![obs(3.5, 5.0, None)]), 5.0, 0).off_road
        );
        assert!(
            RolloutMetrics::from_trajectory(&traj(vec![obs(-3.5001, 5.0, None)]), 5.0, 0).off_road
        );
    }

    #[test]
    fn collision_needs_same_lane_and_small_gap() {
        let near_same = ObstacleObservation::new(3.9, 1.0, 0.5);
        let near_behind = ObstacleObservation::new(-3.9, 1.0, 0.5);
        let near_other = ObstacleObservation::new(1.0, 1.0, 2.0);
        let far_same = ObstacleObservation::new(4.1, 1.0, 0.0);
        let m = |o| {
            RolloutMetrics::from_trajectory(&traj(vec![obs(0.0, 5.0, Some(o))]), 5.0, 0).collision
        };
        assert!(m(near_same));
        assert!(m(near_behind));
        assert!(!m(near_other));
        assert!(!m(far_same));
    }

    #[test]
    fn report_aggregates() {
        let a = RolloutMetrics::from_trajectory(&traj(vec![obs(0.0, 5.0, None)]), 5.0, 1);
        let b = RolloutMetrics::from_trajectory(&traj(vec![obs(4.0, 5.0, None)]), 5.0, 2);
        let r = EvalReport::from_rollouts(vec![a, b]).unwrap();
        assert_eq!((r.off_road, r.collisions, r.clean()), (1, 0, 1));
        assert_eq!(r.mean_abs_delta_y, 2.0);
        assert!(EvalReport::from_rollouts(Vec::new()).is_err());
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), EVAL_COLUMNS.join(","));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn pd_policy_evaluates() {
        let spec = ScenarioSpec::new(ScenarioKind::Straight);
        let sim = Simulator::new(spec.clone(), CostParams::default()).unwrap();
        let policy = init_policy_pd(&spec, &PdGains::default()).unwrap();
        let (report, trajs) = evaluate(&sim, &policy, &[1, 2, 3]).unwrap();
        assert_eq!(report.rollouts.len(), 3);
        assert_eq!(trajs.len(), 3);
        assert_eq!(report.off_road, 0);
        let (again, _) = evaluate(&sim, &policy, &[1, 2, 3]).unwrap();
        assert_eq!(report, again);
    }

    #[test]
    fn mode_mismatch_rejected() {
        let plain = ScenarioSpec::new(ScenarioKind::Straight);
        let with_obstacle = plain.clone().with_obstacle(Default::default());
        let policy = init_policy_pd(&plain, &PdGains::default()).unwrap();
        assert!(check_policy(&policy, &plain).is_ok());
        assert!(matches!(
            check_policy(&policy, &with_obstacle),
            Err(Error::Dimension(_))
        ));
    }
}
