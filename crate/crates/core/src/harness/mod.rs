//! Run configuration, evaluation, curve comparison and run directories.

pub mod compare;
pub mod config;
pub mod eval;
pub mod geometry;
pub mod run;

pub use compare::{merge_curves, Comparison, Curve};
pub use config::{eval_seeds, Algorithm, EvalSettings, RunConfig, ScenarioConfig, CONFIG_VERSION};
pub use eval::{
    check_policy, evaluate, EvalReport, RolloutMetrics, COLLISION_DISTANCE, EVAL_COLUMNS,
    OFF_ROAD_DEVIATION,
};
pub use geometry::{write_obstacle_csv, write_path_csv, OBSTACLE_COLUMNS, PATH_COLUMNS};
pub use run::{
    compare_runs, load_run, policy_file_for, resolve_run_dir, train_run, write_eval, write_run,
    write_trajectory_export, RunOutput, CONFIG_FILE, DGD_TRACE_FILE, EVAL_REPORT_FILE,
    EVAL_SUMMARY_FILE, GMM_FILE, OBSTACLE_FILE, PATH_FILE, POLICY_FILE, TRAIN_LOG_FILE,
    TRAJECTORY_FILE,
};
