//! Training runs and the files of a run directory.
//!
//! A run directory holds `config.toml` (the resolved configuration),
//! `train_log.csv`, `policy.json` and, for GPS, `dgd_trace.csv` and
//! `gmm.json`. Mixed-scenario GPS runs add `policy_<kind>.json` per kind.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::cem::cem_train;
use crate::dynfit::GaussianMixture;
use crate::error::{Error, Result};
use crate::gps::{train, TrainingLog};
use crate::simenv::{ScenarioKind, ScenarioSpec, Trajectory};
use crate::trajopt::LinearGaussianPolicy;

use super::compare::{merge_curves, Comparison, Curve};
use super::config::{Algorithm, RunConfig};
use super::eval::EvalReport;
use super::geometry::{write_obstacle_csv, write_path_csv};

pub const CONFIG_FILE: &str = "config.toml";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const DGD_TRACE_FILE: &str = "dgd_trace.csv";
pub const POLICY_FILE: &str = "policy.json";
pub const GMM_FILE: &str = "gmm.json";
pub const EVAL_SUMMARY_FILE: &str = "eval_summary.csv";
pub const EVAL_REPORT_FILE: &str = "eval_report.json";
pub const PATH_FILE: &str = "path.csv";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const OBSTACLE_FILE: &str = "obstacle.csv";

/// Policy checkpoint name for one scenario kind of a mixed run.
pub fn policy_file_for(kind: ScenarioKind) -> String {
    format!("policy_{kind}.json")
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub algorithm: Algorithm,
    /// One policy per trained scenario kind; the configured kind comes first.
    pub policies: Vec<(ScenarioKind, LinearGaussianPolicy)>,
    pub gmm: Option<GaussianMixture>,
    pub log: TrainingLog,
}

impl RunOutput {
    /// Policy for the configured scenario kind.
    pub fn policy(&self) -> &LinearGaussianPolicy {
        &self.policies[0].1
    }
}

/// Validate `config` and train.
pub fn train_run(config: &RunConfig) -> Result<RunOutput> {
    config.validate()?;
    match config.algorithm {
        Algorithm::Gps => {
            let out = train(config.gps_config())?;
            let kind = config.scenario.kind;
            let mut policies = out.policies;
            policies.sort_by_key(|(k, _)| *k != kind);
            Ok(RunOutput {
                algorithm: Algorithm::Gps,
                policies,
                gmm: out.gmm,
                log: out.log,
            })
        }
        Algorithm::Cem => {
            let (policy, log) = cem_train(config.cem_config())?;
            Ok(RunOutput {
                algorithm: Algorithm::Cem,
                policies: vec![(config.scenario.kind, policy)],
                gmm: None,
                log,
            })
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Write the resolved config, logs and checkpoints into `dir`.
pub fn write_run(dir: &Path, config: &RunConfig, output: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut frozen = config.clone();
    frozen.output_dir = None;
    fs::write(dir.join(CONFIG_FILE), frozen.to_toml_string()?)?;
    output.log.write_csv(create(&dir.join(TRAIN_LOG_FILE))?)?;
    if output.algorithm == Algorithm::Gps {
        output
            .log
            .write_trace_csv(create(&dir.join(DGD_TRACE_FILE))?)?;
    }
    output.policy().save(&dir.join(POLICY_FILE))?;
    if output.policies.len() > 1 {
        for (kind, policy) in &output.policies {
            policy.save(&dir.join(policy_file_for(*kind)))?;
        }
    }
    if let Some(gmm) = &output.gmm {
        gmm.save(&dir.join(GMM_FILE))?;
    }
    Ok(())
}

/// Accept a run directory or a config file whose `output_dir` names one.
pub fn resolve_run_dir(path: &Path) -> Result<PathBuf> {
    if path.is_dir() {
        return Ok(path.to_path_buf());
    }
    let config = RunConfig::load(path)?;
    config.output_dir.ok_or_else(|| {
        Error::Config(format!(
            "{}: output_dir is required to locate the run",
            path.display()
        ))
    })
}

/// Resolved config and training log of a finished run.
pub fn load_run(dir: &Path) -> Result<(RunConfig, TrainingLog)> {
    let config = RunConfig::load(&dir.join(CONFIG_FILE))?;
    let file = File::open(dir.join(TRAIN_LOG_FILE))
        .map_err(|e| Error::InvalidArgument(format!("{}: no finished run ({e})", dir.display())))?;
    Ok((config, TrainingLog::read_csv(file)?))
}

/// Merge the training curves of finished runs. All runs must share the
/// scenario and cost settings.
pub fn compare_runs(paths: &[PathBuf]) -> Result<Comparison> {
    if paths.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "comparison needs at least 2 runs, got {}",
            paths.len()
        )));
    }
    let mut runs = Vec::with_capacity(paths.len());
    for p in paths {
        let dir = resolve_run_dir(p)?;
        let (config, log) = load_run(&dir)?;
        runs.push((dir, config, log));
    }
    let (first_dir, first, _) = &runs[0];
    for (dir, config, _) in &runs[1..] {
        if config.scenario != first.scenario {
            return Err(Error::InvalidArgument(format!(
                "scenario of {} differs from {}",
                dir.display(),
                first_dir.display()
            )));
        }
        if config.cost != first.cost {
            return Err(Error::InvalidArgument(format!(
                "cost settings of {} differ from {}",
                dir.display(),
                first_dir.display()
            )));
        }
    }
    let mut curves: Vec<Curve> = Vec::with_capacity(runs.len());
    for (i, (dir, config, log)) in runs.iter().enumerate() {
        let base = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("{}_{}", config.algorithm, config.seed));
        let label = if curves.iter().any(|c| c.label == base) {
            format!("{base}_{i}")
        } else {
            base
        };
        curves.push(Curve::from_log(label, log));
    }
    merge_curves(&curves)
}

/// Write an evaluation: summary CSV, JSON report, the reference path and
/// per-rollout trajectories (`traj_NNN.csv`, plus `traj_NNN_obstacle.csv`
/// in obstacle mode).
pub fn write_eval(
    dir: &Path,
    spec: &ScenarioSpec,
    report: &EvalReport,
    trajectories: &[Trajectory],
) -> Result<()> {
    fs::create_dir_all(dir)?;
    report.write_csv(create(&dir.join(EVAL_SUMMARY_FILE))?)?;
    serde_json::to_writer_pretty(create(&dir.join(EVAL_REPORT_FILE))?, report)?;
    write_path_csv(&spec.reference_path, create(&dir.join(PATH_FILE))?)?;
    for (i, traj) in trajectories.iter().enumerate() {
        traj.write_csv(create(&dir.join(format!("traj_{i:03}.csv")))?)?;
        if spec.has_obstacle() {
            write_obstacle_csv(
                traj,
                create(&dir.join(format!("traj_{i:03}_obstacle.csv")))?,
            )?;
        }
    }
    Ok(())
}

/// Write one trajectory with its scenario geometry.
pub fn write_trajectory_export(dir: &Path, spec: &ScenarioSpec, traj: &Trajectory) -> Result<()> {
    fs::create_dir_all(dir)?;
    traj.write_csv(create(&dir.join(TRAJECTORY_FILE))?)?;
    write_path_csv(&spec.reference_path, create(&dir.join(PATH_FILE))?)?;
    if spec.has_obstacle() {
        write_obstacle_csv(traj, create(&dir.join(OBSTACLE_FILE))?)?;
    }
    Ok(())
}
