//! Run configuration in TOML.
//!
//! Required keys are `version`, `algorithm`, `seed` and `scenario.kind`;
//! everything else falls back to the module defaults. Unknown keys are
//! rejected.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cem::{CemConfig, CemSettings};
use crate::error::{Error, Result};
use crate::gps::{GpsConfig, GpsSettings};
use crate::rng;
use crate::simenv::{CostParams, ObstacleSpec, ResetJitter, ScenarioKind, ScenarioSpec};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Gps,
    Cem,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Gps => "gps",
            Algorithm::Cem => "cem",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    /// Add the front vehicle described by `front_vehicle`.
    #[serde(default)]
    pub obstacle: bool,
    #[serde(default)]
    pub front_vehicle: ObstacleSpec,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_v_ref")]
    pub v_ref: f64,
    #[serde(default)]
    pub jitter: ResetJitter,
}

fn default_horizon() -> usize {
    50
}

fn default_dt() -> f64 {
    0.1
}

fn default_v_ref() -> f64 {
    5.0
}

impl ScenarioConfig {
    pub fn new(kind: ScenarioKind, obstacle: bool) -> Self {
        Self {
            kind,
            obstacle,
            front_vehicle: ObstacleSpec::default(),
            horizon: default_horizon(),
            dt: default_dt(),
            v_ref: default_v_ref(),
            jitter: ResetJitter::default(),
        }
    }

    pub fn to_spec(&self) -> ScenarioSpec {
        let mut spec = ScenarioSpec::new(self.kind);
        spec.horizon = self.horizon;
        spec.dt = self.dt;
        spec.v_ref = self.v_ref;
        spec.jitter = self.jitter;
        if self.obstacle {
            spec.obstacle = Some(self.front_vehicle);
        }
        spec
    }
}

/// Settings for `eval` and post-training evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub rollouts: usize,
    /// Root of the reset seeds; defaults to the run seed.
    pub seed: Option<u64>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            rollouts: 10,
            seed: None,
        }
    }
}

fn default_iterations() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub algorithm: Algorithm,
    pub seed: u64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    /// Run directory; relative paths resolve against the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Log elapsed seconds per iteration. Off keeps logs bitwise reproducible.
    #[serde(default)]
    pub record_wall_time: bool,
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub cost: CostParams,
    #[serde(default)]
    pub gps: GpsSettings,
    #[serde(default)]
    pub cem: CemSettings,
    #[serde(default)]
    pub eval: EvalSettings,
}

impl RunConfig {
    pub fn new(algorithm: Algorithm, scenario: ScenarioConfig, seed: u64) -> Self {
        Self {
            version: CONFIG_VERSION,
            algorithm,
            seed,
            iterations: default_iterations(),
            output_dir: None,
            record_wall_time: false,
            scenario,
            cost: CostParams::default(),
            gps: GpsSettings::default(),
            cem: CemSettings::default(),
            eval: EvalSettings::default(),
        }
    }

    /// Parse and validate.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)
            .map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Read, parse and validate; a relative `output_dir` is resolved
    /// against the directory holding the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        if let Some(dir) = &config.output_dir {
            if dir.is_relative() {
                let base = path.parent().unwrap_or(Path::new(""));
                config.output_dir = Some(base.join(dir));
            }
        }
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "version: expected {CONFIG_VERSION}, got {}",
                self.version
            )));
        }
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config(format!("seed: must not exceed {}", i64::MAX)));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations: must be at least 1".into()));
        }
        if self.eval.rollouts == 0 {
            return Err(Error::Config("eval.rollouts: must be at least 1".into()));
        }
        if self.eval.seed.is_some_and(|s| s > i64::MAX as u64) {
            return Err(Error::Config(format!(
                "eval.seed: must not exceed {}",
                i64::MAX
            )));
        }
        if self.algorithm == Algorithm::Cem && self.gps.mixed {
            return Err(Error::Config(
                "gps.mixed: only supported with algorithm = \"gps\"".into(),
            ));
        }
        self.scenario.to_spec().validate()?;
        self.cost.validate()?;
        self.gps.validate()?;
        self.cem.validate()
    }

    pub fn scenario_spec(&self) -> ScenarioSpec {
        self.scenario.to_spec()
    }

    pub fn gps_config(&self) -> GpsConfig {
        GpsConfig {
            scenario: self.scenario_spec(),
            cost: self.cost,
            iterations: self.iterations,
            seed: self.seed,
            settings: self.gps.clone(),
            record_wall_time: self.record_wall_time,
        }
    }

    pub fn cem_config(&self) -> CemConfig {
        CemConfig {
            scenario: self.scenario_spec(),
            cost: self.cost,
            iterations: self.iterations,
            seed: self.seed,
            settings: self.cem.clone(),
            record_wall_time: self.record_wall_time,
        }
    }

    /// Reset seeds of the evaluation rollouts.
    pub fn eval_seeds(&self) -> Vec<u64> {
        eval_seeds(self.eval.seed.unwrap_or(self.seed), self.eval.rollouts)
    }
}

/// Reset seeds for `n` evaluation rollouts under root `seed`.
pub fn eval_seeds(seed: u64, n: usize) -> Vec<u64> {
    (0..n as u64)
        .map(|i| rng::derive(seed, &[rng::EVAL, i]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str =
        "version = 1\nalgorithm = \"gps\"\nseed = 3\n[scenario]\nkind = \"straight\"\n";

    #[test]
    fn minimal_config_takes_defaults() {
        let c = RunConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(
            c,
            RunConfig::new(
                Algorithm::Gps,
                ScenarioConfig::new(ScenarioKind::Straight, false),
                3
            )
        );
        assert_eq!(c.scenario_spec(), ScenarioSpec::new(ScenarioKind::Straight));
    }

    #[test]
    fn missing_field_is_named() {
        let text = MINIMAL.replace("seed = 3\n", "");
        let err = RunConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("seed"), "{err}");
        let err = RunConfig::from_toml_str(&MINIMAL.replace("kind = \"straight\"\n", ""))
            .unwrap_err()
            .to_string();
        assert!(err.contains("kind"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        for extra in [
            "bogus = 1\n",
            "[gps]\nbogus = 1\n",
            "[scenario.front_vehicle]\nbogus = 1\n",
        ] {
            let text = format!("{MINIMAL}{extra}");
            let err = RunConfig::from_toml_str(&text).unwrap_err().to_string();
            assert!(err.contains("bogus"), "{err}");
        }
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_toml_str(&MINIMAL.replace("version = 1", "version = 2")).is_err());
        assert!(RunConfig::from_toml_str(&format!("iterations = 0\n{MINIMAL}")).is_err());
        assert!(RunConfig::from_toml_str(&format!("{MINIMAL}[cost]\nalpha_l = -1.0\n")).is_err());
        assert!(RunConfig::from_toml_str(&MINIMAL.replace("straight", "highway")).is_err());
    }

    #[test]
    fn comments_and_obstacle_table() {
        let text = format!(
            "# a run\n{MINIMAL}obstacle = true # front car\n[scenario.front_vehicle]\ngap = 12.0\n"
        );
        let c = RunConfig::from_toml_str(&text).unwrap();
        let o = c.scenario_spec().obstacle.unwrap();
        assert_eq!(o.gap, 12.0);
        assert_eq!(o.speed, ObstacleSpec::default().speed);
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut c = RunConfig::new(
            Algorithm::Cem,
            ScenarioConfig::new(ScenarioKind::Turn90, true),
            11,
        );
        c.cem.smoothing = 0.0;
        c.gps.prior.n0 = Some(9.0);
        c.eval.seed = Some(5);
        let text = c.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn relative_output_dir_resolves_against_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, format!("output_dir = \"out\"\n{MINIMAL}")).unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(c.output_dir.unwrap(), dir.path().join("out"));
    }

    #[test]
    fn eval_seeds_default_to_run_seed() {
        let c = RunConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.eval_seeds(), eval_seeds(3, 10));
        assert_eq!(eval_seeds(3, 4).len(), 4);
    }
}
