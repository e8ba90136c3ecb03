use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::path::{Piece, ReferencePath};
use super::vehicle::{ControlAction, VehicleModel, VehicleState};
use crate::error::{Error, Result};
use crate::rng;

pub const LANE_WIDTH: f64 = 3.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Straight,
    Turn90,
    Roundabout,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 3] = [
        ScenarioKind::Straight,
        ScenarioKind::Turn90,
        ScenarioKind::Roundabout,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioKind::Straight => "straight",
            ScenarioKind::Turn90 => "turn90",
            ScenarioKind::Roundabout => "roundabout",
        }
    }

    /// Straight: 200 m lane. Turn: 10 m approach, 10 m radius left turn,
    /// exit straight. Roundabout: 10 m approach onto a 20 m radius arc.
    pub fn reference_path(&self) -> ReferencePath {
        let pieces: &[Piece] = match self {
            ScenarioKind::Straight => &[Piece::Straight { length: 200.0 }],
            ScenarioKind::Turn90 => &[
                Piece::Straight { length: 10.0 },
                Piece::Arc {
                    radius: 10.0,
                    sweep: PI / 2.0,
                },
                Piece::Straight { length: 150.0 },
            ],
            ScenarioKind::Roundabout => &[
                Piece::Straight { length: 10.0 },
                Piece::Arc {
                    radius: 20.0,
                    sweep: 1.5 * PI,
                },
                Piece::Straight { length: 100.0 },
            ],
        };
        ReferencePath::from_pieces(0.0, 0.0, 0.0, pieces)
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "straight" => Ok(ScenarioKind::Straight),
            "turn90" => Ok(ScenarioKind::Turn90),
            "roundabout" => Ok(ScenarioKind::Roundabout),
            other => Err(Error::Config(format!(
                "unknown scenario kind `{other}` (expected straight, turn90 or roundabout)"
            ))),
        }
    }
}

/// A front vehicle driving along the reference path at constant speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObstacleSpec {
    /// Initial along-path gap to the ego vehicle, m.
    pub gap: f64,
    /// Constant speed, m/s.
    pub speed: f64,
    /// Lane index; 0 is the ego lane, positive lanes are to the left.
    pub lane: i32,
    /// Offset of the obstacle from its lane center, m (positive left).
    pub lateral_offset: f64,
}

impl ObstacleSpec {
    /// Lateral position of the obstacle relative to the reference path.
    pub fn path_offset(&self) -> f64 {
        self.lane as f64 * LANE_WIDTH + self.lateral_offset
    }
}

impl Default for ObstacleSpec {
    fn default() -> Self {
        Self {
            gap: 15.0,
            speed: 1.0,
            lane: 0,
            lateral_offset: -0.3,
        }
    }
}

/// Half-widths of the uniform start-pose jitter applied by `reset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResetJitter {
    pub lateral: f64,
    pub heading: f64,
    pub speed: f64,
}

impl Default for ResetJitter {
    fn default() -> Self {
        Self {
            lateral: 0.5,
            heading: 0.05,
            speed: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub reference_path: ReferencePath,
    pub v_ref: f64,
    pub obstacle: Option<ObstacleSpec>,
    pub horizon: usize,
    pub dt: f64,
    pub jitter: ResetJitter,
}

impl ScenarioSpec {
    /// Default scenario of `kind`: 5 m/s reference, 50 steps of 0.1 s.
    pub fn new(kind: ScenarioKind) -> Self {
        Self {
            kind,
            reference_path: kind.reference_path(),
            v_ref: 5.0,
            obstacle: None,
            horizon: 50,
            dt: 0.1,
            jitter: ResetJitter::default(),
        }
    }

    pub fn with_obstacle(mut self, obstacle: ObstacleSpec) -> Self {
        self.obstacle = Some(obstacle);
        self
    }

    pub fn has_obstacle(&self) -> bool {
        self.obstacle.is_some()
    }

    /// Dimension of the observation vector fed to policies and models.
    pub fn state_dim(&self) -> usize {
        Observation::dim(self.has_obstacle())
    }

    pub fn action_dim(&self) -> usize {
        ACTION_DIM
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(Error::Config(format!(
                "scenario.horizon must be >= 2, got {}",
                self.horizon
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!(
                "scenario.dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.v_ref.is_finite() && self.v_ref >= 0.0) {
            return Err(Error::Config(format!(
                "scenario.v_ref must be non-negative, got {}",
                self.v_ref
            )));
        }
        if ReferencePath::from_points(self.reference_path.points().to_vec()).is_none() {
            return Err(Error::Config(
                "reference path arclength must be strictly increasing".into(),
            ));
        }
        if let Some(o) = &self.obstacle {
            if !(o.gap.is_finite()
                && o.speed.is_finite()
                && o.speed >= 0.0
                && o.lateral_offset.is_finite())
            {
                return Err(Error::Config(format!("invalid obstacle {o:?}")));
            }
        }
        Ok(())
    }
}

pub const ACTION_DIM: usize = 2;

/// Obstacle-related observation fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleObservation {
    /// Along-path gap from ego to the front vehicle, m.
    pub s_rel: f64,
    pub v_front: f64,
    /// Ego lateral position minus obstacle lateral position, m.
    pub lateral_gap: f64,
    pub same_lane: bool,
}

impl ObstacleObservation {
    pub fn new(s_rel: f64, v_front: f64, lateral_gap: f64) -> Self {
        Self {
            s_rel,
            v_front,
            lateral_gap,
            same_lane: lateral_gap.abs() < 0.5 * LANE_WIDTH,
        }
    }
}

/// Features extracted from the world for policies, models and costs.
///
/// The vector form is `[Δy, Δφ, v, δ]`, extended by `[s_rel, v_front]` in
/// obstacle mode. The steering angle is included because the action is a
/// steering rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub delta_y: f64,
    pub delta_phi: f64,
    pub v: f64,
    pub steer: f64,
    pub obstacle: Option<ObstacleObservation>,
}

impl Observation {
    pub fn dim(with_obstacle: bool) -> usize {
        if with_obstacle {
            6
        } else {
            4
        }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = vec![self.delta_y, self.delta_phi, self.v, self.steer];
        if let Some(o) = &self.obstacle {
            v.extend([o.s_rel, o.v_front]);
        }
        DVector::from_vec(v)
    }

    /// Rebuild an observation from its vector form. `obstacle_offset` is the
    /// obstacle's lateral offset from the path, required for 6-d vectors.
    pub fn from_vector(v: &DVector<f64>, obstacle_offset: Option<f64>) -> Self {
        let obstacle = match (v.len(), obstacle_offset) {
            (6, Some(offset)) => Some(ObstacleObservation::new(v[4], v[5], v[0] - offset)),
            _ => None,
        };
        Self {
            delta_y: v[0],
            delta_phi: v[1],
            v: v[2],
            steer: v[3],
            obstacle,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|x| x.is_finite())
            && self.obstacle.is_none_or(|o| o.lateral_gap.is_finite())
    }
}

pub fn action_to_vector(a: &ControlAction) -> DVector<f64> {
    DVector::from_vec(vec![a.a_x, a.delta_dot])
}

pub fn action_from_vector(v: &DVector<f64>) -> ControlAction {
    ControlAction::new(v[0], v[1])
}

/// Complete simulator state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub vehicle: VehicleState,
    /// Along-path position of the front vehicle, if any.
    pub obstacle_arclength: Option<f64>,
    pub step: usize,
}

/// Place the ego vehicle at the path start with seeded pose jitter.
pub fn reset(spec: &ScenarioSpec, seed: u64) -> World {
    let mut rng = rng::stream(seed, &[rng::RESET]);
    let mut uniform = |half: f64| {
        if half > 0.0 {
            rng.random_range(-half..=half)
        } else {
            0.0
        }
    };
    let lateral = uniform(spec.jitter.lateral);
    let heading = uniform(spec.jitter.heading);
    let speed = (spec.v_ref + uniform(spec.jitter.speed)).max(0.0);
    let (x, y, path_heading) = spec.reference_path.offset_point(0.0, lateral);
    World {
        vehicle: VehicleState {
            v_x: speed,
            x,
            y,
            psi: path_heading + heading,
            ..Default::default()
        },
        obstacle_arclength: spec.obstacle.map(|o| o.gap),
        step: 0,
    }
}

/// Extract the observation of `world`.
pub fn observe(spec: &ScenarioSpec, world: &World) -> Observation {
    let v = &world.vehicle;
    let proj = spec.reference_path.project(v.x, v.y, v.psi);
    let obstacle = spec
        .obstacle
        .zip(world.obstacle_arclength)
        .map(|(o, s_obs)| {
            ObstacleObservation::new(
                s_obs - proj.arclength,
                o.speed,
                proj.lateral - o.path_offset(),
            )
        });
    Observation {
        delta_y: proj.lateral,
        delta_phi: proj.heading_error,
        v: v.v_x,
        steer: v.delta,
        obstacle,
    }
}

/// Advance the world by one step of `spec.dt`.
pub fn advance(
    spec: &ScenarioSpec,
    model: &VehicleModel,
    world: &World,
    action: &ControlAction,
) -> Result<World> {
    let vehicle = model.step(&world.vehicle, action, spec.dt)?;
    let obstacle_arclength = spec
        .obstacle
        .zip(world.obstacle_arclength)
        .map(|(o, s)| s + o.speed * spec.dt);
    Ok(World {
        vehicle,
        obstacle_arclength,
        step: world.step + 1,
    })
}

/// World-frame position of the obstacle, if present.
pub fn obstacle_position(spec: &ScenarioSpec, world: &World) -> Option<(f64, f64)> {
    spec.obstacle.zip(world.obstacle_arclength).map(|(o, s)| {
        let (x, y, _) = spec.reference_path.offset_point(s, o.path_offset());
        (x, y)
    })
}
