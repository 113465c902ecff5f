//! The `run`, `replay` and `sweep` commands, independent of argument parsing.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use softmorph::control::{hand_designed_inchworm, hand_designed_rolling, Gait, Genome};
use softmorph::env::{evaluate_with, EnvError, Environment, FitnessResult, Program};
use softmorph::optimizer::{experiment, friction_sweep, run_experiment, OptimizerError, RunResult, SimFitness, SweepPoint, ROSTER};
use thiserror::Error;

use crate::config::HarnessConfig;
use crate::output::{sweep_csv, trajectory_csv, write_atomic, Metadata, Payload, ResultsDocument};

pub const BENCHMARKS: [&str; 2] = ["benchmark-rolling", "benchmark-inchworm"];
pub const OUT_DIR_ENV: &str = "SOFTMORPH_OUT_DIR";
const FALLBACK_OUT_DIR: &str = "results";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("unknown experiment '{0}' (expected one of the roster names, benchmark-rolling or benchmark-inchworm)")]
    UnknownExperiment(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error("invalid genome file {path}: {reason}")]
    Genome { path: PathBuf, reason: String },
    #[error("no feasible point in the friction grid (every point has mu_u < 0 or delta_mu < 0)")]
    InfeasibleGrid,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    /// Process exit status: 2 for bad input, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::UnknownExperiment(_)
            | CliError::Usage(_)
            | CliError::Config(_)
            | CliError::Genome { .. }
            | CliError::InfeasibleGrid => 2,
            CliError::Env(_) | CliError::Optimizer(_) | CliError::Io { .. } => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Output directory: explicit value, then the environment variable, then the
/// config's `output_dir`, then `./results`.
pub fn output_dir(explicit: Option<&Path>, cfg: &HarnessConfig) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    cfg.output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(FALLBACK_OUT_DIR))
}

#[derive(Clone, Debug, Default)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub generations: Option<usize>,
    pub env: Option<String>,
}

fn benchmark_gait(name: &str) -> Option<Gait> {
    match name {
        "benchmark-rolling" => Some(hand_designed_rolling()),
        "benchmark-inchworm" => Some(hand_designed_inchworm()),
        _ => None,
    }
}

fn now_unix() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Runs a roster experiment or a benchmark gait and writes the results
/// document to `out`. `progress` receives one line per finished run.
pub fn cmd_run(
    cfg: &HarnessConfig,
    name: &str,
    overrides: &RunOverrides,
    out: &Path,
    progress: Option<&(dyn Fn(&str) + Sync)>,
) -> Result<ResultsDocument, CliError> {
    cfg.validate()?;
    let started = now_unix();
    let clock = Instant::now();
    let mut cfg = cfg.clone();
    if let Some(seed) = overrides.seed {
        cfg.experiments.base_seed = seed;
    }
    if let Some(runs) = overrides.runs {
        cfg.experiments.runs = runs;
    }
    if let Some(generations) = overrides.generations {
        cfg.experiments.generations = generations;
    }
    cfg.validate()?;

    let (environment, payload) = if let Some(gait) = benchmark_gait(name) {
        let env = Environment::parse(overrides.env.as_deref().unwrap_or("flat"))?;
        let mut eval = cfg.eval.clone();
        eval.columns = gait.schedule.columns();
        let result = evaluate_with(&cfg.model(), &Program::from_gait(&gait), &env, &eval)?;
        if let Some(report) = progress {
            report(&format!("{name} on {}: {:.4} BL/s", env.label(), result.speed));
        }
        (
            env.label(),
            Payload::Benchmark {
                gait: gait.name.to_string(),
                result,
            },
        )
    } else {
        if !ROSTER.contains(&name) {
            return Err(CliError::UnknownExperiment(name.to_string()));
        }
        let mut spec = experiment(name, &cfg.experiments)?;
        if let Some(env) = &overrides.env {
            spec.environment = env.clone();
        }
        spec.validate()?;
        let fitness = SimFitness {
            model: cfg.model(),
            env: spec.env()?,
            cfg: cfg.eval.clone(),
        };
        let done = AtomicUsize::new(0);
        let total = spec.runs;
        let report_run = |run: &RunResult| {
            let n = done.fetch_add(1, Ordering::SeqCst) + 1;
            if let Some(report) = progress {
                report(&format!(
                    "{name}: run seed {} finished ({n}/{total}), best {:.4} BL/s",
                    run.seed, run.best_fitness
                ));
            }
        };
        let result = run_experiment(&spec, |g: &Genome| fitness.fitness(g), Some(&report_run))?;
        (spec.environment.clone(), Payload::Experiment(result))
    };

    let doc = ResultsDocument {
        metadata: Metadata::new(started, clock.elapsed().as_secs_f64()),
        experiment: name.to_string(),
        environment,
        base_seed: cfg.experiments.base_seed,
        config: cfg,
        payload,
    };
    doc.save(out).map_err(io_err(out))?;
    if let Payload::Experiment(result) = &doc.payload {
        if let Some(best) = result
            .runs
            .iter()
            .filter(|r| r.best_fitness.is_finite())
            .max_by(|a, b| a.best_fitness.total_cmp(&b.best_fitness))
        {
            let path = out.with_extension("best.toml");
            write_atomic(&path, best.best.to_toml().as_bytes()).map_err(io_err(&path))?;
        }
    }
    Ok(doc)
}

/// Reads a genome from TOML, or names a benchmark gait.
pub fn load_program(source: &str, cfg: &HarnessConfig) -> Result<(Program, usize), CliError> {
    if let Some(gait) = benchmark_gait(source) {
        let columns = gait.schedule.columns();
        return Ok((Program::from_gait(&gait), columns));
    }
    let path = PathBuf::from(source);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let genome = Genome::from_toml(&text).map_err(|e| CliError::Genome {
        path: path.clone(),
        reason: e.to_string().lines().next().unwrap_or_default().to_string(),
    })?;
    Ok((Program::from_genome(&genome, &cfg.eval), cfg.eval.columns))
}

/// Evaluates one genome (or benchmark gait) and writes its trajectory.
pub fn cmd_replay(cfg: &HarnessConfig, source: &str, env: &str, out: &Path) -> Result<FitnessResult, CliError> {
    cfg.validate()?;
    let env = Environment::parse(env)?;
    let (program, columns) = load_program(source, cfg)?;
    let mut eval = cfg.eval.clone();
    eval.columns = columns;
    let result = evaluate_with(&cfg.model(), &program, &env, &eval)?;
    write_atomic(out, &trajectory_csv(&result.trajectory)).map_err(io_err(out))?;
    Ok(result)
}

/// Evaluates the inchworm gait over the friction grid and writes one row per
/// grid point.
pub fn cmd_sweep(
    cfg: &HarnessConfig,
    delta_mus: &[f64],
    mean_mus: &[f64],
    env: &str,
    out: &Path,
) -> Result<Vec<SweepPoint>, CliError> {
    cfg.validate()?;
    if delta_mus.is_empty() || mean_mus.is_empty() {
        return Err(CliError::Usage("sweep needs at least one delta_mu and one mean_mu".into()));
    }
    if delta_mus.iter().chain(mean_mus).any(|v| !v.is_finite()) {
        return Err(CliError::Usage("friction values must be finite".into()));
    }
    let env = Environment::parse(env)?;
    let feasible = delta_mus
        .iter()
        .any(|&d| d >= 0.0 && mean_mus.iter().any(|&m| m - 0.5 * d >= 0.0));
    if !feasible {
        return Err(CliError::InfeasibleGrid);
    }
    let mut eval = cfg.eval.clone();
    eval.columns = hand_designed_inchworm().schedule.columns();
    let points = friction_sweep(&cfg.model(), &env, &eval, delta_mus, mean_mus);
    write_atomic(out, &sweep_csv(&points)).map_err(io_err(out))?;
    Ok(points)
}
