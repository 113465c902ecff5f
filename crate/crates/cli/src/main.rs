use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use softmorph_cli::commands::{cmd_replay, cmd_run, cmd_sweep, output_dir, CliError, RunOverrides, OUT_DIR_ENV};
use softmorph_cli::config::{load_config, HarnessConfig};

/// Soft shape-changing robot simulator: hill-climbing experiments, gait
/// replay and foot-friction sweeps.
#[derive(Parser, Debug)]
#[command(name = "softmorph", version, about, long_about = None)]
struct Cli {
    /// Harness configuration file (TOML). Absent keys take their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Directory for output files when --out is not given.
    #[arg(long, global = true, value_name = "DIR", env = OUT_DIR_ENV)]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a roster experiment or evaluate a benchmark gait, writing a JSON
    /// results document.
    ///
    /// Experiments: flat-control, hill-control, flat-shape-control,
    /// hill-shape-control, flat-all, hill-all, hill-inflated-control.
    /// Benchmarks: benchmark-rolling, benchmark-inchworm.
    Run {
        experiment: String,
        /// Base seed; run k uses seed + k.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of independent hill climbers.
        #[arg(long)]
        runs: Option<usize>,
        /// Generations per hill climber.
        #[arg(long)]
        generations: Option<usize>,
        /// Environment override: flat or incline:<degrees>.
        #[arg(long)]
        env: Option<String>,
        /// Results file (default <out-dir>/<experiment>.json).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Suppress per-run progress on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Evaluate one genome file (TOML) or benchmark gait and write its
    /// centre-of-mass trajectory as CSV.
    Replay {
        /// Genome TOML file, or benchmark-rolling / benchmark-inchworm.
        genome: String,
        /// flat or incline:<degrees>.
        #[arg(long, default_value = "flat")]
        env: String,
        /// Trajectory file (default <out-dir>/<genome>-trajectory.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the hand-designed inchworm gait over a grid of foot friction
    /// pairs, mu_i = mean + delta/2 and mu_u = mean - delta/2.
    Sweep {
        /// Comma-separated friction differences (default from config).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        delta_mu: Option<Vec<f64>>,
        /// Comma-separated mean friction values (default from config).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        mean_mu: Option<Vec<f64>>,
        /// flat or incline:<degrees> (default from config).
        #[arg(long)]
        env: Option<String>,
        /// Sweep file (default <out-dir>/sweep.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn stem(source: &str) -> String {
    PathBuf::from(source)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "genome".into())
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(path) => load_config(path)?,
        None => HarnessConfig::default(),
    };
    let dir = output_dir(cli.out_dir.as_deref(), &cfg);
    match cli.command {
        Command::Run {
            experiment,
            seed,
            runs,
            generations,
            env,
            out,
            quiet,
        } => {
            let out = out.unwrap_or_else(|| dir.join(format!("{experiment}.json")));
            let overrides = RunOverrides {
                seed,
                runs,
                generations,
                env,
            };
            let report = |line: &str| eprintln!("{line}");
            let progress: Option<&(dyn Fn(&str) + Sync)> = if quiet { None } else { Some(&report) };
            cmd_run(&cfg, &experiment, &overrides, &out, progress)?;
            println!("{}", out.display());
        }
        Command::Replay { genome, env, out } => {
            let out = out.unwrap_or_else(|| dir.join(format!("{}-trajectory.csv", stem(&genome))));
            let result = cmd_replay(&cfg, &genome, &env, &out)?;
            println!("{} speed {:.6} BL/s", out.display(), result.speed);
        }
        Command::Sweep {
            delta_mu,
            mean_mu,
            env,
            out,
        } => {
            let out = out.unwrap_or_else(|| dir.join("sweep.csv"));
            let delta = delta_mu.unwrap_or_else(|| cfg.sweep.delta_mu.clone());
            let mean = mean_mu.unwrap_or_else(|| cfg.sweep.mean_mu.clone());
            let env = env.unwrap_or_else(|| cfg.sweep.environment.clone());
            cmd_sweep(&cfg, &delta, &mean, &env, &out)?;
            println!("{}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
