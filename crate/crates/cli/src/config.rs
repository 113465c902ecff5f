//! Harness configuration: every model, evaluation and experiment setting in
//! one TOML document. Absent keys take their defaults.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use softmorph::env::{EvalConfig, Environment, Model};
use softmorph::lattice::{ContactModel, MaterialParams};
use softmorph::optimizer::RosterSettings;
use softmorph::robot::RobotSpec;
use thiserror::Error;

use crate::output::write_atomic;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid config key '{key}': {reason}")]
    Invalid { key: String, reason: String },
    #[error("cannot write config: {0}")]
    Write(#[from] std::io::Error),
}

/// Keys that would widen the genome's pressure bounds. The bounds belong to
/// the robot model and are not configurable.
const FIXED_BOUND_KEYS: [&str; 5] = ["p_range", "p_min", "p_max", "pressure_range", "max_pressure_kpa"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    /// `flat` or `incline:<degrees>`.
    pub environment: String,
    pub delta_mu: Vec<f64>,
    pub mean_mu: Vec<f64>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            environment: "flat".into(),
            delta_mu: vec![0.0, 0.25, 0.5, 1.0, 1.5, 2.0],
            mean_mu: vec![1.0],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub material: MaterialParams,
    pub robot: RobotSpec,
    pub contact: ContactModel,
    pub eval: EvalConfig,
    pub experiments: RosterSettings,
    pub sweep: SweepSettings,
    /// Directory for result files when no explicit path is given.
    pub output_dir: Option<PathBuf>,
}

fn invalid(key: &str, reason: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        reason: reason.to_string(),
    }
}

fn find_fixed_bound(value: &toml::Value, prefix: &str) -> Option<String> {
    let table = value.as_table()?;
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        if FIXED_BOUND_KEYS.contains(&k.as_str()) {
            return Some(key);
        }
        if let Some(found) = find_fixed_bound(v, &key) {
            return Some(found);
        }
    }
    None
}

impl HarnessConfig {
    pub fn model(&self) -> Model {
        Model {
            material: self.material.clone(),
            robot: self.robot.clone(),
            contact: self.contact.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.material.validate().map_err(|e| invalid("material", e))?;
        self.robot.validate().map_err(|e| invalid("robot", e))?;
        self.contact.validate().map_err(|e| invalid("contact", e))?;
        self.eval.validate().map_err(|e| invalid("eval", e))?;
        let x = &self.experiments;
        if x.generations == 0 {
            return Err(invalid("experiments.generations", "must be >= 1"));
        }
        if x.runs == 0 {
            return Err(invalid("experiments.runs", "must be >= 1"));
        }
        Environment::incline(x.hill_deg).map_err(|e| invalid("experiments.hill_deg", e))?;
        x.mutation
            .validate()
            .map_err(|e| invalid("experiments.mutation", e))?;
        Environment::parse(&self.sweep.environment).map_err(|e| invalid("sweep.environment", e))?;
        for (key, list) in [("sweep.delta_mu", &self.sweep.delta_mu), ("sweep.mean_mu", &self.sweep.mean_mu)] {
            if list.is_empty() {
                return Err(invalid(key, "must not be empty"));
            }
            if list.iter().any(|v| !v.is_finite()) {
                return Err(invalid(key, "values must be finite"));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let raw: toml::Value = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if let Some(key) = find_fixed_bound(&raw, "") {
            return Err(invalid(&key, "pressure bounds are fixed by the robot model at [0, 12] kPa"));
        }
        let cfg: HarnessConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

pub fn load_config(path: &Path) -> Result<HarnessConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    HarnessConfig::from_toml_str(&text)
}

pub fn save_config(cfg: &HarnessConfig, path: &Path) -> Result<(), ConfigError> {
    write_atomic(path, cfg.to_toml_string().as_bytes())?;
    Ok(())
}
