//! Hill climbing over genomes, the experiment roster, aggregation across
//! independent runs, and the foot-friction sweep.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{
    hand_designed_inchworm, mutate, random_masked, ActuatorGene, Genome, MutationParams, ParamMask,
    ACTUATOR_COUNT, GENE_MAX,
};
use crate::env::{evaluate_with, EnvError, EvalConfig, Environment, Model, Program};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error("invalid experiment '{name}': {reason}")]
    InvalidSpec { name: String, reason: String },
    #[error("unknown experiment '{0}'")]
    UnknownExperiment(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Fitness values may be `-inf` (a diverged evaluation). JSON has no
/// infinity, so non-finite values are written as null and read back as `-inf`.
mod fitness_list {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(values: &[f64], s: S) -> Result<S::Ok, S::Error> {
        values
            .iter()
            .map(|v| v.is_finite().then_some(*v))
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw = Vec::<Option<f64>>::deserialize(d)?;
        Ok(raw.into_iter().map(|v| v.unwrap_or(f64::NEG_INFINITY)).collect())
    }
}

mod fitness_value {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        v.is_finite().then_some(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    /// `flat` or `incline:<degrees>`.
    pub environment: String,
    pub mask: ParamMask,
    /// Source of every masked-off parameter.
    pub fixed: Genome,
    pub generations: usize,
    pub runs: usize,
    pub mutation: MutationParams,
    pub base_seed: u64,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        let fail = |reason: &str| {
            Err(OptimizerError::InvalidSpec {
                name: self.name.clone(),
                reason: reason.into(),
            })
        };
        if self.generations == 0 {
            return fail("generations must be >= 1");
        }
        if self.runs == 0 {
            return fail("runs must be >= 1");
        }
        if !self.mask.any_free() {
            return fail("at least one parameter set must be free");
        }
        if let Err(e) = self.mutation.validate() {
            return fail(&e);
        }
        Environment::parse(&self.environment)?;
        Ok(())
    }

    pub fn env(&self) -> Result<Environment, OptimizerError> {
        Ok(Environment::parse(&self.environment)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    /// Best fitness after the initial evaluation and after each generation.
    #[serde(with = "fitness_list")]
    pub history: Vec<f64>,
    pub best: Genome,
    #[serde(with = "fitness_value")]
    pub best_fitness: f64,
}

/// Single-incumbent hill climber. The incumbent is replaced only when a
/// variant scores strictly higher; failed evaluations score `-inf`.
pub fn hill_climb<F, E>(spec: &ExperimentSpec, seed: u64, fitness: F) -> RunResult
where
    F: Fn(&Genome) -> Result<f64, E>,
{
    let score = |g: &Genome| match fitness(g) {
        Ok(f) if !f.is_nan() => f,
        _ => f64::NEG_INFINITY,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = random_masked(&mut rng, &spec.fixed, spec.mask);
    let mut best_fitness = score(&best);
    let mut history = Vec::with_capacity(spec.generations + 1);
    history.push(best_fitness);
    for _ in 0..spec.generations {
        let variant = mutate(&best, &spec.mutation, &mut rng, spec.mask);
        let f = score(&variant);
        if f > best_fitness {
            best = variant;
            best_fitness = f;
        }
        history.push(best_fitness);
    }
    RunResult {
        seed,
        history,
        best,
        best_fitness,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub name: String,
    /// Runs in seed order.
    pub runs: Vec<RunResult>,
    #[serde(with = "fitness_list")]
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    #[serde(with = "fitness_list")]
    pub max: Vec<f64>,
    #[serde(with = "fitness_value")]
    pub final_mean: f64,
    #[serde(with = "fitness_value")]
    pub final_max: f64,
}

/// Per-generation mean, population standard deviation and max across runs.
/// Runs are put in seed order first, so the result does not depend on the
/// order in which they finished. Mean and std are taken over finite values;
/// a generation where every run is `-inf` has mean `-inf` and std 0.
pub fn aggregate(name: &str, mut runs: Vec<RunResult>) -> ExperimentResult {
    runs.sort_by_key(|r| r.seed);
    let generations = runs.iter().map(|r| r.history.len()).min().unwrap_or(0);
    let mut mean = Vec::with_capacity(generations);
    let mut std = Vec::with_capacity(generations);
    let mut max = Vec::with_capacity(generations);
    for g in 0..generations {
        let values: Vec<f64> = runs.iter().map(|r| r.history[g]).collect();
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        max.push(values.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        if finite.is_empty() {
            mean.push(f64::NEG_INFINITY);
            std.push(0.0);
            continue;
        }
        let n = finite.len() as f64;
        let m = finite.iter().sum::<f64>() / n;
        let var = finite.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        mean.push(m);
        std.push(var.sqrt());
    }
    ExperimentResult {
        name: name.to_string(),
        final_mean: mean.last().copied().unwrap_or(f64::NEG_INFINITY),
        final_max: max.last().copied().unwrap_or(f64::NEG_INFINITY),
        runs,
        mean,
        std,
        max,
    }
}

/// Runs `spec.runs` independent climbers with seeds `base_seed + k`, in
/// parallel, and aggregates them. `progress` is called as each run finishes.
pub fn run_experiment<F, E>(
    spec: &ExperimentSpec,
    fitness: F,
    progress: Option<&(dyn Fn(&RunResult) + Sync)>,
) -> Result<ExperimentResult, OptimizerError>
where
    F: Fn(&Genome) -> Result<f64, E> + Sync,
{
    spec.validate()?;
    let runs: Vec<RunResult> = (0..spec.runs as u64)
        .into_par_iter()
        .map(|k| {
            let run = hill_climb(spec, spec.base_seed + k, &fitness);
            if let Some(report) = progress {
                report(&run);
            }
            run
        })
        .collect();
    Ok(aggregate(&spec.name, runs))
}

/// Fitness of a genome in the simulator: speed in body lengths per second.
#[derive(Clone, Debug)]
pub struct SimFitness {
    pub model: Model,
    pub env: Environment,
    pub cfg: EvalConfig,
}

impl SimFitness {
    pub fn fitness(&self, genome: &Genome) -> Result<f64, EnvError> {
        let program = Program::from_genome(genome, &self.cfg);
        Ok(evaluate_with(&self.model, &program, &self.env, &self.cfg)?.speed)
    }
}

/// Mean of the best speeds reached on flat ground and on the incline.
pub fn combined_max(flat_max: f64, hill_max: f64) -> f64 {
    0.5 * (flat_max + hill_max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub delta_mu: f64,
    pub mean_mu: f64,
    /// Gripping foot friction.
    pub mu_i: f64,
    /// Released foot friction.
    pub mu_u: f64,
    /// Speed in BL/s; `None` when the point is infeasible or diverged.
    pub speed: Option<f64>,
    pub valid: bool,
}

/// Evaluates the hand-designed inchworm gait with the foot friction pair
/// `mu_i = mean + delta/2`, `mu_u = mean - delta/2` over the grid
/// `delta_mus x mean_mus`. Points with `mu_u < 0` or `delta < 0` are marked
/// invalid and skipped.
pub fn friction_sweep(
    model: &Model,
    env: &Environment,
    cfg: &EvalConfig,
    delta_mus: &[f64],
    mean_mus: &[f64],
) -> Vec<SweepPoint> {
    let program = Program::from_gait(&hand_designed_inchworm());
    let grid: Vec<(f64, f64)> = delta_mus
        .iter()
        .flat_map(|&d| mean_mus.iter().map(move |&m| (d, m)))
        .collect();
    grid.par_iter()
        .map(|&(delta_mu, mean_mu)| {
            let mu_i = mean_mu + 0.5 * delta_mu;
            let mu_u = mean_mu - 0.5 * delta_mu;
            let feasible = delta_mu >= 0.0 && mu_u >= 0.0 && mu_i.is_finite();
            let speed = feasible
                .then(|| {
                    let cfg = EvalConfig {
                        foot_friction: Some((mu_i, mu_u)),
                        ..cfg.clone()
                    };
                    evaluate_with(model, &program, env, &cfg).ok().map(|r| r.speed)
                })
                .flatten();
            SweepPoint {
                delta_mu,
                mean_mu,
                mu_i,
                mu_u,
                speed,
                valid: feasible,
            }
        })
        .collect()
}

pub const ROSTER: [&str; 7] = [
    "flat-control",
    "hill-control",
    "flat-shape-control",
    "hill-shape-control",
    "flat-all",
    "hill-all",
    "hill-inflated-control",
];

/// Inflated, width-wise: the fixed setting for flat-ground experiments.
pub const ROUND_P_KPA: f64 = 12.0;
pub const ROUND_THETA_DEG: f64 = 0.0;
/// Deflated, length-wise: the fixed setting for incline experiments.
pub const FLAT_P_KPA: f64 = 0.0;
pub const FLAT_THETA_DEG: f64 = 90.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RosterSettings {
    pub hill_deg: f64,
    pub generations: usize,
    pub runs: usize,
    pub base_seed: u64,
    pub mutation: MutationParams,
}

impl Default for RosterSettings {
    fn default() -> Self {
        Self {
            hill_deg: 10.0,
            generations: 200,
            runs: 60,
            base_seed: 0,
            mutation: MutationParams::default(),
        }
    }
}

fn fixed_genome(p_kpa: f64, theta_deg: f64) -> Genome {
    // Controls are never masked in the roster; an all-off schedule is the
    // neutral placeholder.
    let off = ActuatorGene {
        f: 0,
        phi: GENE_MAX,
    };
    Genome::new(p_kpa, theta_deg, [off; ACTUATOR_COUNT]).expect("roster constants are in range")
}

/// Builds one of the seven roster experiments.
pub fn experiment(name: &str, settings: &RosterSettings) -> Result<ExperimentSpec, OptimizerError> {
    let control = ParamMask {
        orientation: false,
        shape: false,
        control: true,
    };
    let shape_control = ParamMask {
        shape: true,
        ..control
    };
    let hill = format!("incline:{}", settings.hill_deg);
    let (environment, mask, p, theta) = match name {
        "flat-control" => ("flat".to_string(), control, ROUND_P_KPA, ROUND_THETA_DEG),
        "hill-control" => (hill, control, FLAT_P_KPA, FLAT_THETA_DEG),
        "flat-shape-control" => ("flat".to_string(), shape_control, ROUND_P_KPA, ROUND_THETA_DEG),
        "hill-shape-control" => (hill, shape_control, FLAT_P_KPA, FLAT_THETA_DEG),
        "flat-all" => ("flat".to_string(), ParamMask::ALL, ROUND_P_KPA, ROUND_THETA_DEG),
        "hill-all" => (hill, ParamMask::ALL, FLAT_P_KPA, FLAT_THETA_DEG),
        "hill-inflated-control" => (hill, control, ROUND_P_KPA, ROUND_THETA_DEG),
        other => return Err(OptimizerError::UnknownExperiment(other.to_string())),
    };
    let spec = ExperimentSpec {
        name: name.to_string(),
        environment,
        mask,
        fixed: fixed_genome(p, theta),
        generations: settings.generations,
        runs: settings.runs,
        mutation: settings.mutation,
        base_seed: settings.base_seed,
    };
    spec.validate()?;
    Ok(spec)
}

pub fn roster(settings: &RosterSettings) -> Result<Vec<ExperimentSpec>, OptimizerError> {
    ROSTER.iter().map(|n| experiment(n, settings)).collect()
}
