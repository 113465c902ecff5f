//! Result documents and delimited-text exports. Every file is written to a
//! temporary sibling and renamed into place.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use softmorph::env::{FitnessResult, TrajectorySample};
use softmorph::optimizer::{ExperimentResult, SweepPoint};

use crate::config::HarnessConfig;

pub const TRAJECTORY_HEADER: [&str; 6] = ["step", "time_s", "com_x", "com_y", "com_z", "goal_displacement_m"];
pub const SWEEP_HEADER: [&str; 6] = ["delta_mu", "mean_mu", "mu_i", "mu_u", "speed_bls", "valid"];

pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "output path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

/// What a command produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Payload {
    Experiment(ExperimentResult),
    Benchmark { gait: String, result: FitnessResult },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool: String,
    pub version: String,
    /// Seconds since the Unix epoch when the command started.
    pub started_unix_s: f64,
    pub wall_clock_s: f64,
}

impl Metadata {
    pub fn new(started_unix_s: f64, wall_clock_s: f64) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            started_unix_s,
            wall_clock_s,
        }
    }
}

/// A self-contained record of one `run`: the exact configuration, the
/// experiment name, environment and seed, and the results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsDocument {
    pub metadata: Metadata,
    pub experiment: String,
    pub environment: String,
    pub base_seed: u64,
    pub config: HarnessConfig,
    pub payload: Payload,
}

impl ResultsDocument {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("results serialize")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }
}

pub fn trajectory_csv(samples: &[TrajectorySample]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRAJECTORY_HEADER).expect("in-memory write");
    for s in samples {
        w.write_record([
            s.step.to_string(),
            s.time.to_string(),
            s.com.x.to_string(),
            s.com.y.to_string(),
            s.com.z.to_string(),
            s.goal_displacement.to_string(),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn sweep_csv(points: &[SweepPoint]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SWEEP_HEADER).expect("in-memory write");
    for p in points {
        w.write_record([
            p.delta_mu.to_string(),
            p.mean_mu.to_string(),
            p.mu_i.to_string(),
            p.mu_u.to_string(),
            p.speed.map(|s| s.to_string()).unwrap_or_default(),
            p.valid.to_string(),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}
