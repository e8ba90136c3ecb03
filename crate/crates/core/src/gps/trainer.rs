//! The GPS loop: sample, refit the mixture and local dynamics, optimize the
//! policy under the KL trust region, repeat.

use std::collections::VecDeque;
use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::log::{LogRow, TraceRow, TrainingLog};
use super::pd::{init_policy_pd, PdGains};
use crate::dynfit::{
    estimate_initial_state, fit_local_dynamics, prediction_error, stack_tuple, GaussianMixture,
    PriorStrength,
};
use crate::error::{Error, Result};
use crate::rng;
use crate::simenv::{CostParams, ScenarioKind, ScenarioSpec, Simulator, Trajectory};
use crate::trajopt::{
    dgd_optimize, DualState, LinearGaussianPolicy, QuadraticCostExpansion, Sequence,
};

/// Floor on the initial-state covariance handed to the forward pass.
const INITIAL_COVARIANCE_FLOOR: f64 = 1e-6;

/// GPS hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpsSettings {
    pub trajectories_per_iteration: usize,
    /// Upper bound on mixture components.
    pub gmm_components: usize,
    /// Tuples per mixture component; fewer tuples use fewer components.
    pub tuples_per_component: usize,
    pub em_iterations: usize,
    /// Stop EM once the per-sample log-likelihood gain drops below this.
    pub em_tolerance: f64,
    pub gmm_floor: f64,
    /// Rollouts kept for refitting the mixture.
    pub replay_rollouts: usize,
    /// Disable to fit local dynamics without the mixture prior.
    pub use_prior: bool,
    pub prior: PriorStrength,
    pub dual: DualState,
    pub pd: PdGains,
    /// Sample the scenario kind per rollout and keep one policy per kind.
    pub mixed: bool,
    /// One mixture for all scenario kinds (mixed mode only).
    pub shared_gmm: bool,
}

impl Default for GpsSettings {
    fn default() -> Self {
        Self {
            trajectories_per_iteration: 4,
            gmm_components: 20,
            tuples_per_component: 40,
            em_iterations: 10,
            em_tolerance: 1e-6,
            gmm_floor: 1e-6,
            replay_rollouts: 20,
            use_prior: true,
            prior: PriorStrength::default(),
            dual: DualState::default(),
            pd: PdGains::default(),
            mixed: false,
            shared_gmm: true,
        }
    }
}

impl GpsSettings {
    pub fn validate(&self) -> Result<()> {
        if self.trajectories_per_iteration < 2 {
            return Err(Error::Config(
                "gps.trajectories_per_iteration must be at least 2".into(),
            ));
        }
        if self.gmm_components == 0 || self.tuples_per_component == 0 || self.replay_rollouts == 0 {
            return Err(Error::Config(
                "gps.gmm_components, gps.tuples_per_component and gps.replay_rollouts must be positive".into(),
            ));
        }
        if !(self.gmm_floor > 0.0) || !(self.em_tolerance >= 0.0) {
            return Err(Error::Config(
                "gps.gmm_floor must be positive and gps.em_tolerance non-negative".into(),
            ));
        }
        self.prior.validate()?;
        self.dual.validate()?;
        self.pd.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpsConfig {
    /// Scenario; in mixed mode its kind is replaced per rollout.
    pub scenario: ScenarioSpec,
    pub cost: CostParams,
    pub iterations: usize,
    pub seed: u64,
    pub settings: GpsSettings,
    /// Record elapsed time in the log; off keeps logs reproducible.
    pub record_wall_time: bool,
}

impl GpsConfig {
    pub fn new(scenario: ScenarioSpec, seed: u64) -> Self {
        Self {
            scenario,
            cost: CostParams::default(),
            iterations: 10,
            seed,
            settings: GpsSettings::default(),
            record_wall_time: false,
        }
    }
}

struct Condition {
    sim: Simulator,
    policy: LinearGaussianPolicy,
    dual: DualState,
}

/// Step-wise GPS training state.
pub struct GpsTrainer {
    config: GpsConfig,
    conditions: Vec<Condition>,
    gmms: Vec<Option<GaussianMixture>>,
    buffers: Vec<VecDeque<Vec<DVector<f64>>>>,
    iteration: usize,
    log: TrainingLog,
    started: Instant,
}

/// Outcome of `train`.
#[derive(Debug, Clone)]
pub struct GpsOutput {
    /// One policy per trained scenario kind, in `ScenarioKind::ALL` order.
    pub policies: Vec<(ScenarioKind, LinearGaussianPolicy)>,
    pub log: TrainingLog,
    pub gmm: Option<GaussianMixture>,
}

impl GpsOutput {
    /// Policy of the first (in single-scenario mode, only) condition.
    pub fn policy(&self) -> &LinearGaussianPolicy {
        &self.policies[0].1
    }
}

impl GpsTrainer {
    pub fn new(config: GpsConfig) -> Result<Self> {
        config.settings.validate()?;
        config.scenario.validate()?;
        let kinds: Vec<ScenarioKind> = if config.settings.mixed {
            ScenarioKind::ALL.to_vec()
        } else {
            vec![config.scenario.kind]
        };
        let conditions = kinds
            .into_iter()
            .map(|kind| {
                let mut spec = config.scenario.clone();
                if spec.kind != kind {
                    spec.kind = kind;
                    spec.reference_path = kind.reference_path();
                }
                let policy = init_policy_pd(&spec, &config.settings.pd)?;
                Ok(Condition {
                    sim: Simulator::new(spec, config.cost)?,
                    policy,
                    dual: config.settings.dual.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let n_models = if config.settings.mixed && !config.settings.shared_gmm {
            conditions.len()
        } else {
            1
        };
        Ok(Self {
            config,
            conditions,
            gmms: vec![None; n_models],
            buffers: vec![VecDeque::new(); n_models],
            iteration: 0,
            log: TrainingLog::default(),
            started: Instant::now(),
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn log(&self) -> &TrainingLog {
        &self.log
    }

    /// Environment steps consumed by training rollouts.
    pub fn env_steps(&self) -> u64 {
        self.conditions.iter().map(|c| c.sim.steps_taken()).sum()
    }

    /// Current policy of the first condition.
    pub fn policy(&self) -> &LinearGaussianPolicy {
        &self.conditions[0].policy
    }

    pub fn policy_for(&self, kind: ScenarioKind) -> Option<&LinearGaussianPolicy> {
        self.conditions
            .iter()
            .find(|c| c.sim.spec.kind == kind)
            .map(|c| &c.policy)
    }

    pub fn simulator(&self, kind: ScenarioKind) -> Option<&Simulator> {
        self.conditions
            .iter()
            .find(|c| c.sim.spec.kind == kind)
            .map(|c| &c.sim)
    }

    pub fn gmm(&self) -> Option<&GaussianMixture> {
        self.gmms[0].as_ref()
    }

    fn model_index(&self, condition: usize) -> usize {
        if self.gmms.len() == 1 {
            0
        } else {
            condition
        }
    }

    /// Run one GPS iteration and return its log row.
    pub fn iterate(&mut self) -> Result<&LogRow> {
        let it = self.iteration;
        let seed = self.config.seed;
        let n = self.config.settings.trajectories_per_iteration;
        let mut pick = rng::stream(seed, &[rng::SCENARIO, it as u64]);
        let jobs: Vec<(usize, u64)> = (0..n)
            .map(|i| {
                let c = if self.conditions.len() > 1 {
                    pick.random_range(0..self.conditions.len())
                } else {
                    0
                };
                (c, rng::derive(seed, &[rng::ROLLOUT, it as u64, i as u64]))
            })
            .collect();
        let results: Vec<Result<Trajectory>> = jobs
            .par_iter()
            .map(|&(c, s)| {
                let cond = &self.conditions[c];
                cond.sim.rollout(&cond.policy, s, true)
            })
            .collect();
        let mut samples: Vec<Vec<Trajectory>> = vec![Vec::new(); self.conditions.len()];
        let mut diverged = None;
        for ((c, _), r) in jobs.iter().zip(results) {
            match r {
                Ok(t) => samples[*c].push(t),
                Err(e @ Error::Divergence(_)) => diverged = Some(e),
                Err(e) => return Err(e),
            }
        }
        let mut row = LogRow {
            iteration: it,
            env_steps: self.env_steps(),
            mean_cost: f64::NAN,
            kl: None,
            lambda: None,
            fit_residual: None,
            wall_time_s: 0.0,
        };
        if let Some(e) = diverged {
            log::warn!("iteration {it} aborted: {e}");
        } else {
            let costs: Vec<f64> = samples
                .iter()
                .flatten()
                .map(Trajectory::total_cost)
                .collect();
            row.mean_cost = costs.iter().sum::<f64>() / costs.len() as f64;
            self.update(it, &samples, &mut row)?;
        }
        if self.config.record_wall_time {
            row.wall_time_s = self.started.elapsed().as_secs_f64();
        }
        self.log.rows.push(row);
        self.iteration += 1;
        Ok(self.log.rows.last().expect("row just pushed"))
    }

    fn update(&mut self, it: usize, samples: &[Vec<Trajectory>], row: &mut LogRow) -> Result<()> {
        let settings = self.config.settings.clone();
        for (c, trajs) in samples.iter().enumerate() {
            let m = self.model_index(c);
            for t in trajs {
                let states = t.state_vectors();
                let actions = t.action_vectors();
                let tuples = (0..actions.len())
                    .map(|k| stack_tuple(&states[k], &actions[k], &states[k + 1]))
                    .collect();
                self.buffers[m].push_back(tuples);
            }
            while self.buffers[m].len() > settings.replay_rollouts {
                self.buffers[m].pop_front();
            }
        }
        if settings.use_prior {
            for m in 0..self.gmms.len() {
                self.refit_mixture(it, m)?;
            }
        }

        let (mut kls, mut lambdas, mut residuals) = (Vec::new(), Vec::new(), Vec::new());
        for (c, trajs) in samples.iter().enumerate() {
            if trajs.len() < 2 {
                continue;
            }
            let states: Vec<_> = trajs.iter().map(Trajectory::state_vectors).collect();
            let actions: Vec<_> = trajs.iter().map(Trajectory::action_vectors).collect();
            let gmm = if settings.use_prior {
                self.gmms[self.model_index(c)].as_ref()
            } else {
                None
            };
            let dynamics = match fit_local_dynamics(&states, &actions, gmm, settings.prior) {
                Ok(d) => d,
                Err(e) => {
                    log::warn!("iteration {it}: dynamics fit failed, policy unchanged: {e}");
                    continue;
                }
            };
            residuals.push(prediction_error(&dynamics, &states, &actions));
            let initial = estimate_initial_state(&states, INITIAL_COVARIANCE_FLOOR)?;
            let cond = &mut self.conditions[c];
            let sequences: Vec<Sequence<'_>> = states
                .iter()
                .zip(&actions)
                .map(|(s, a)| (s.as_slice(), a.as_slice()))
                .collect();
            let cost = QuadraticCostExpansion::averaged(&cond.sim.cost, &sequences)?;
            let outcome = dgd_optimize(&dynamics, &cost, &cond.policy, &initial, &cond.dual)?;
            for (inner, trace) in outcome.trace.iter().enumerate() {
                self.log.traces.push(TraceRow {
                    iteration: it,
                    scenario: cond.sim.spec.kind,
                    inner,
                    trace: *trace,
                });
            }
            if outcome.constraint_failed {
                log::warn!("iteration {it}: KL constraint not met, halving epsilon");
                cond.dual = DualState {
                    epsilon: 0.5 * cond.dual.epsilon,
                    ..outcome.dual
                };
            } else {
                cond.policy = outcome.policy;
                cond.dual = DualState {
                    epsilon: settings.dual.epsilon,
                    ..outcome.dual
                };
                kls.push(outcome.kl);
            }
            lambdas.push(cond.dual.lambda);
        }
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        row.kl = mean(&kls);
        row.lambda = mean(&lambdas);
        row.fit_residual = mean(&residuals);
        Ok(())
    }

    fn refit_mixture(&mut self, it: usize, m: usize) -> Result<()> {
        let settings = &self.config.settings;
        let tuples: Vec<DVector<f64>> = self.buffers[m].iter().flatten().cloned().collect();
        if tuples.is_empty() {
            return Ok(());
        }
        let k = (tuples.len() / settings.tuples_per_component).clamp(1, settings.gmm_components);
        let mut rng = rng::stream(self.config.seed, &[rng::GMM_INIT, it as u64, m as u64]);
        let start = match self.gmms[m].take() {
            Some(g) if g.components() == k => g,
            _ => GaussianMixture::kmeans_plus_plus(&tuples, k, settings.gmm_floor, &mut rng)?,
        };
        self.gmms[m] = Some(start.em_fit(
            &tuples,
            settings.em_iterations,
            settings.em_tolerance,
            &mut rng,
        )?);
        Ok(())
    }

    pub fn into_output(self) -> GpsOutput {
        GpsOutput {
            policies: self
                .conditions
                .into_iter()
                .map(|c| (c.sim.spec.kind, c.policy))
                .collect(),
            log: self.log,
            gmm: self.gmms.into_iter().next().flatten(),
        }
    }
}

/// Run `config.iterations` GPS iterations from the PD initialization.
pub fn train(config: GpsConfig) -> Result<GpsOutput> {
    let iterations = config.iterations;
    let mut trainer = GpsTrainer::new(config)?;
    for _ in 0..iterations {
        trainer.iterate()?;
    }
    Ok(trainer.into_output())
}
