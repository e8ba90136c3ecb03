//! `gpsdrive`: train, evaluate, compare and export driving policies.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration error,
//! 3 runtime divergence.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use gpsdrive::harness::{
    check_policy, compare_runs, eval_seeds, evaluate, train_run, write_eval, write_run,
    write_trajectory_export, RunConfig, CONFIG_FILE, POLICY_FILE,
};
use gpsdrive::simenv::{CostParams, ObstacleSpec, ScenarioKind, ScenarioSpec, Simulator};
use gpsdrive::trajopt::LinearGaussianPolicy;
use gpsdrive::Error;

#[derive(Parser)]
#[command(
    name = "gpsdrive",
    version,
    about = "Guided policy search for a bicycle-model driving simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy from a TOML run config.
    Train {
        config: PathBuf,
        /// Run directory; overrides `output_dir` in the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Evaluate a policy with deterministic mean-action rollouts.
    Eval {
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        rollouts: Option<usize>,
        /// Root of the reset seeds.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for the summary and trajectory CSVs.
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge training logs of finished runs onto one env-steps axis.
    Compare {
        /// Run directories or run configs with `output_dir`.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Roll out one episode and write it with the scenario geometry.
    ExportTraj {
        #[command(flatten)]
        target: Target,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sample actions from the policy instead of applying its mean.
        #[arg(long)]
        explore: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Which policy to run and in which scenario.
#[derive(Args)]
struct Target {
    /// Policy checkpoint, or a run directory holding `policy.json`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Run config supplying scenario and cost; defaults to the run
    /// directory's `config.toml` when `--checkpoint` is a directory.
    #[arg(long, conflicts_with = "scenario")]
    config: Option<PathBuf>,
    /// Scenario kind with default settings and cost weights.
    #[arg(long)]
    scenario: Option<ScenarioKind>,
    /// Add the default front vehicle (with `--scenario`).
    #[arg(long, requires = "scenario")]
    obstacle: bool,
}

struct Resolved {
    policy: LinearGaussianPolicy,
    spec: ScenarioSpec,
    cost: CostParams,
    config: Option<RunConfig>,
}

impl Target {
    fn resolve(&self) -> anyhow::Result<Resolved> {
        let (policy_path, run_config) = if self.checkpoint.is_dir() {
            (
                self.checkpoint.join(POLICY_FILE),
                Some(self.checkpoint.join(CONFIG_FILE)),
            )
        } else {
            (self.checkpoint.clone(), None)
        };
        let policy = LinearGaussianPolicy::load(&policy_path)
            .with_context(|| format!("cannot load checkpoint {}", policy_path.display()))?;
        let config = match (&self.config, self.scenario, run_config) {
            (Some(path), _, _) => Some(RunConfig::load(path)?),
            (None, Some(_), _) => None,
            (None, None, Some(path)) => Some(RunConfig::load(&path)?),
            (None, None, None) => {
                return Err(Error::Config(
                    "give --config or --scenario with a checkpoint file".into(),
                )
                .into())
            }
        };
        let (spec, cost) = match (&config, self.scenario) {
            (Some(c), _) => (c.scenario_spec(), c.cost),
            (None, Some(kind)) => {
                let mut spec = ScenarioSpec::new(kind);
                if self.obstacle {
                    spec = spec.with_obstacle(ObstacleSpec::default());
                }
                (spec, CostParams::default())
            }
            (None, None) => unreachable!("scenario source resolved above"),
        };
        check_policy(&policy, &spec)?;
        Ok(Resolved {
            policy,
            spec,
            cost,
            config,
        })
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { config, output_dir } => {
            let cfg = RunConfig::load(&config)?;
            let Some(dir) = output_dir.or_else(|| cfg.output_dir.clone()) else {
                return Err(Error::Config(format!(
                    "{}: output_dir is not set; pass --output-dir",
                    config.display()
                ))
                .into());
            };
            log::info!(
                "training {} on {} for {} iterations",
                cfg.algorithm,
                cfg.scenario.kind,
                cfg.iterations
            );
            let output = train_run(&cfg)?;
            write_run(&dir, &cfg, &output)?;
            if let Some(last) = output.log.rows.last() {
                println!(
                    "{} {}: {} iterations, {} env steps, final mean cost {}",
                    cfg.algorithm,
                    cfg.scenario.kind,
                    cfg.iterations,
                    last.env_steps,
                    last.mean_cost
                );
            }
            println!("wrote {}", dir.display());
        }
        Command::Eval {
            target,
            rollouts,
            seed,
            out,
        } => {
            let r = target.resolve()?;
            let settings = r
                .config
                .as_ref()
                .map(|c| (c.eval.seed.unwrap_or(c.seed), c.eval.rollouts));
            let root = seed.or(settings.map(|s| s.0)).unwrap_or(0);
            let n = rollouts.or(settings.map(|s| s.1)).unwrap_or(10);
            if n == 0 {
                return Err(Error::Config("--rollouts must be at least 1".into()).into());
            }
            let sim = Simulator::new(r.spec.clone(), r.cost)?;
            let (report, trajectories) = evaluate(&sim, &r.policy, &eval_seeds(root, n))?;
            write_eval(&out, &r.spec, &report, &trajectories)?;
            println!(
                "{} rollouts: mean cost {:.4}, mean |dy| {:.4}, mean |v-v_ref| {:.4}, collisions {}, off-road {}",
                n, report.mean_total_cost, report.mean_abs_delta_y, report.mean_abs_speed_error, report.collisions,
                report.off_road
            );
            println!("wrote {}", out.display());
        }
        Command::Compare { runs, out } => {
            let comparison = compare_runs(&runs)?;
            match out {
                Some(path) => {
                    comparison.write_csv(std::fs::File::create(&path)?)?;
                    println!("wrote {}", path.display());
                }
                None => comparison.write_csv(std::io::stdout().lock())?,
            }
        }
        Command::ExportTraj {
            target,
            seed,
            explore,
            out,
        } => {
            let r = target.resolve()?;
            let sim = Simulator::new(r.spec.clone(), r.cost)?;
            let traj = sim.rollout(&r.policy, seed, explore)?;
            write_trajectory_export(&out, &r.spec, &traj)?;
            println!(
                "total cost {:.4}; wrote {}",
                traj.total_cost(),
                out.display()
            );
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Config(_)) => 2,
        Some(
            Error::Divergence(_)
            | Error::CovarianceBlowUp { .. }
            | Error::NonFiniteDerivative { .. },
        ) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
