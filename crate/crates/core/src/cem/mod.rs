//! Cross-entropy-method policy search over time-invariant linear policies.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gps::{LogRow, PdGains, TrainingLog};
use crate::rng;
use crate::simenv::{CostParams, ScenarioSpec, Simulator};
use crate::trajopt::{LinearGaussianPolicy, PolicyStep};

/// Gaussian over the flattened policy parameters `θ = [vec(K), k]` (row-major K).
#[derive(Debug, Clone, PartialEq)]
pub struct CemDistribution {
    pub mu: DVector<f64>,
    pub sigma: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CemSettings {
    pub population: usize,
    pub elite_fraction: f64,
    pub sigma0: f64,
    pub sigma_floor: f64,
    /// Weight of the old mean in `μ ← s·μ_old + (1 − s)·μ_elite`; 0 disables.
    pub smoothing: f64,
    pub pd: PdGains,
}

impl Default for CemSettings {
    fn default() -> Self {
        Self {
            population: 4,
            elite_fraction: 0.25,
            sigma0: 0.5,
            sigma_floor: 1e-3,
            smoothing: 0.5,
            pd: PdGains::default(),
        }
    }
}

impl CemSettings {
    pub fn validate(&self) -> Result<()> {
        if self.population == 0 {
            return Err(Error::Config("cem.population must be at least 1".into()));
        }
        if !(self.elite_fraction > 0.0 && self.elite_fraction <= 1.0) {
            return Err(Error::Config(
                "cem.elite_fraction must lie in (0, 1]".into(),
            ));
        }
        if !(self.sigma0 >= 0.0 && self.sigma_floor > 0.0) {
            return Err(Error::Config(
                "cem.sigma0 must be non-negative and cem.sigma_floor positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::Config("cem.smoothing must lie in [0, 1)".into()));
        }
        self.pd.validate()
    }
}

/// Number of elites kept from `n` candidates.
pub fn elite_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).ceil() as usize).clamp(1, n.max(1))
}

/// `n` coordinate-wise Gaussian draws, with `σ` floored.
pub fn cem_sample<R: Rng + ?Sized>(
    dist: &CemDistribution,
    n: usize,
    floor: f64,
    rng: &mut R,
) -> Vec<DVector<f64>> {
    (0..n)
        .map(|_| {
            DVector::from_fn(dist.mu.len(), |i, _| {
                let z: f64 = StandardNormal.sample(rng);
                dist.mu[i] + dist.sigma[i].max(floor) * z
            })
        })
        .collect()
}

/// Refit the distribution to the lowest-cost candidates. Ties keep the lower
/// sample index. With smoothing the spread is measured about the smoothed mean.
pub fn cem_update(
    dist: &CemDistribution,
    evaluated: &[(DVector<f64>, f64)],
    elite_fraction: f64,
    floor: f64,
    smoothing: f64,
) -> Result<CemDistribution> {
    let mut order: Vec<usize> = (0..evaluated.len())
        .filter(|&i| evaluated[i].1.is_finite())
        .collect();
    if order.is_empty() {
        return Err(Error::InvalidArgument(
            "no candidate has a finite cost".into(),
        ));
    }
    order.sort_by(|&a, &b| evaluated[a].1.total_cmp(&evaluated[b].1).then(a.cmp(&b)));
    let elites: Vec<&DVector<f64>> = order
        .iter()
        .take(elite_count(evaluated.len(), elite_fraction))
        .map(|&i| &evaluated[i].0)
        .collect();
    let m = elites.len() as f64;
    let elite_mean = elites
        .iter()
        .fold(DVector::zeros(dist.mu.len()), |acc, e| acc + *e)
        / m;
    let mu = if smoothing == 0.0 {
        elite_mean
    } else {
        &dist.mu * smoothing + &elite_mean * (1.0 - smoothing)
    };
    let sigma = DVector::from_fn(mu.len(), |i, _| {
        let var = elites.iter().map(|e| (e[i] - mu[i]).powi(2)).sum::<f64>() / m;
        var.sqrt().max(floor)
    });
    Ok(CemDistribution { mu, sigma })
}

/// Flatten a time-invariant gain and offset into `θ`.
pub fn flatten(gain: &DMatrix<f64>, offset: &DVector<f64>) -> DVector<f64> {
    let mut v: Vec<f64> = gain
        .row_iter()
        .flat_map(|r| r.iter().copied().collect::<Vec<_>>())
        .collect();
    v.extend(offset.iter());
    DVector::from_vec(v)
}

/// Time-invariant policy from `θ` with the given action covariance.
pub fn unflatten(
    theta: &DVector<f64>,
    spec: &ScenarioSpec,
    covariance: &DMatrix<f64>,
) -> Result<LinearGaussianPolicy> {
    let (da, ds) = (spec.action_dim(), spec.state_dim());
    if theta.len() != da * ds + da {
        return Err(Error::Dimension(format!(
            "parameter vector has {} entries, expected {}",
            theta.len(),
            da * ds + da
        )));
    }
    let gain = DMatrix::from_row_slice(da, ds, &theta.as_slice()[..da * ds]);
    let offset = theta.rows(da * ds, da).into_owned();
    LinearGaussianPolicy::time_invariant(
        PolicyStep {
            gain,
            offset,
            covariance: covariance.clone(),
        },
        spec.horizon,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct CemConfig {
    pub scenario: ScenarioSpec,
    pub cost: CostParams,
    pub iterations: usize,
    pub seed: u64,
    pub settings: CemSettings,
    pub record_wall_time: bool,
}

impl CemConfig {
    pub fn new(scenario: ScenarioSpec, seed: u64) -> Self {
        Self {
            scenario,
            cost: CostParams::default(),
            iterations: 10,
            seed,
            settings: CemSettings::default(),
            record_wall_time: false,
        }
    }
}

/// Step-wise CEM training state.
pub struct CemTrainer {
    config: CemConfig,
    sim: Simulator,
    dist: CemDistribution,
    covariance: DMatrix<f64>,
    iteration: usize,
    log: TrainingLog,
    started: Instant,
}

impl CemTrainer {
    pub fn new(config: CemConfig) -> Result<Self> {
        config.settings.validate()?;
        let sim = Simulator::new(config.scenario.clone(), config.cost)?;
        let (gain, offset) = config.settings.pd.gain_and_offset(&sim.spec);
        let mu = flatten(&gain, &offset);
        let sigma = DVector::from_element(
            mu.len(),
            config.settings.sigma0.max(config.settings.sigma_floor),
        );
        let da = sim.spec.action_dim();
        let std = config.settings.pd.action_std;
        let covariance = DMatrix::identity(da, da) * (std * std);
        Ok(Self {
            config,
            sim,
            dist: CemDistribution { mu, sigma },
            covariance,
            iteration: 0,
            log: TrainingLog::default(),
            started: Instant::now(),
        })
    }

    pub fn distribution(&self) -> &CemDistribution {
        &self.dist
    }

    pub fn log(&self) -> &TrainingLog {
        &self.log
    }

    pub fn env_steps(&self) -> u64 {
        self.sim.steps_taken()
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    /// Policy at the distribution mean.
    pub fn policy(&self) -> Result<LinearGaussianPolicy> {
        unflatten(&self.dist.mu, &self.sim.spec, &self.covariance)
    }

    /// Sample a population, roll each candidate out once with its mean
    /// action, and refit.
    pub fn iterate(&mut self) -> Result<&LogRow> {
        let it = self.iteration;
        let s = &self.config.settings;
        let mut rng = rng::stream(self.config.seed, &[rng::CEM_SAMPLE, it as u64]);
        let thetas = cem_sample(&self.dist, s.population, s.sigma_floor, &mut rng);
        let costs: Vec<f64> = thetas
            .par_iter()
            .enumerate()
            .map(|(i, theta)| {
                let policy = unflatten(theta, &self.sim.spec, &self.covariance)?;
                let seed = rng::derive(self.config.seed, &[rng::ROLLOUT, it as u64, i as u64]);
                match self.sim.rollout(&policy, seed, false) {
                    Ok(t) => Ok(t.total_cost()),
                    Err(Error::Divergence(_)) => Ok(f64::INFINITY),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<_>>()?;
        let finite: Vec<f64> = costs.iter().copied().filter(|c| c.is_finite()).collect();
        let mean_cost = if finite.is_empty() {
            f64::NAN
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        let evaluated: Vec<(DVector<f64>, f64)> = thetas.into_iter().zip(costs).collect();
        match cem_update(
            &self.dist,
            &evaluated,
            s.elite_fraction,
            s.sigma_floor,
            s.smoothing,
        ) {
            Ok(d) => self.dist = d,
            Err(e) => log::warn!("iteration {it}: distribution unchanged: {e}"),
        }
        let wall_time_s = if self.config.record_wall_time {
            self.started.elapsed().as_secs_f64()
        } else {
            0.0
        };
        self.log.rows.push(LogRow {
            iteration: it,
            env_steps: self.env_steps(),
            mean_cost,
            kl: None,
            lambda: None,
            fit_residual: None,
            wall_time_s,
        });
        self.iteration += 1;
        Ok(self.log.rows.last().expect("row just pushed"))
    }
}

/// Run `config.iterations` CEM updates from the PD initialization.
pub fn cem_train(config: CemConfig) -> Result<(LinearGaussianPolicy, TrainingLog)> {
    let iterations = config.iterations;
    let mut trainer = CemTrainer::new(config)?;
    for _ in 0..iterations {
        trainer.iterate()?;
    }
    Ok((trainer.policy()?, trainer.log))
}
