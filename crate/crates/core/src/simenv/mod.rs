//! Bicycle-model driving simulator: dynamics, scenario geometry, front
//! vehicle, observations and costs.

pub mod cost;
pub mod path;
pub mod rollout;
pub mod scenario;
pub mod vehicle;

pub use cost::{
    lane_weight, obstacle_cost, tracking_cost, CostParams, DrivingCost, TRIGGER_DISTANCE,
};
pub use path::{project_to_path, wrap_angle, PathPoint, Projection, ReferencePath};
pub use rollout::{rollout, Simulator, Trajectory, TRAJECTORY_COLUMNS};
pub use scenario::{
    action_from_vector, action_to_vector, advance, observe, obstacle_position, reset, Observation,
    ObstacleObservation, ObstacleSpec, ResetJitter, ScenarioKind, ScenarioSpec, World, ACTION_DIM,
    LANE_WIDTH,
};
pub use vehicle::{step, ControlAction, MagicFormula, VehicleModel, VehicleParams, VehicleState};
