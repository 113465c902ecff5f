//! Genomes, their decoding into binary actuation schedules, and mutation.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::robot::{BLADDER_COUNT, MAX_PRESSURE_KPA};

pub const ACTUATOR_COUNT: usize = 10;
/// Upper bound of the per-actuator frequency and offset genes.
pub const GENE_MAX: u8 = 16;
pub const MAX_THETA_DEG: f64 = 90.0;
/// Default schedule width in columns.
pub const DEFAULT_COLUMNS: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenomeError {
    #[error("p_kpa {0} outside [0, 12]")]
    Pressure(f64),
    #[error("theta_deg {0} outside [0, 90]")]
    Theta(f64),
    #[error("actuator {index}: {field} = {value} outside [0, 16]")]
    Gene {
        index: usize,
        field: &'static str,
        value: i64,
    },
    #[error("expected {ACTUATOR_COUNT} actuators, got {0}")]
    ActuatorCount(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActuatorGene {
    /// Columns skipped between successive activations.
    pub f: u8,
    /// Columns before the first activation.
    pub phi: u8,
}

/// Search variable: core pressure, orientation and ten actuator genes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGenome", into = "RawGenome")]
pub struct Genome {
    p_kpa: f64,
    theta_deg: f64,
    actuators: [ActuatorGene; ACTUATOR_COUNT],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGenome {
    p_kpa: f64,
    theta_deg: f64,
    actuators: Vec<RawGene>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGene {
    f: i64,
    phi: i64,
}

impl TryFrom<RawGenome> for Genome {
    type Error = GenomeError;

    fn try_from(raw: RawGenome) -> Result<Self, Self::Error> {
        if raw.actuators.len() != ACTUATOR_COUNT {
            return Err(GenomeError::ActuatorCount(raw.actuators.len()));
        }
        let mut actuators = [ActuatorGene { f: 0, phi: 0 }; ACTUATOR_COUNT];
        for (index, (slot, gene)) in actuators.iter_mut().zip(&raw.actuators).enumerate() {
            let check = |field, value: i64| {
                if (0..=GENE_MAX as i64).contains(&value) {
                    Ok(value as u8)
                } else {
                    Err(GenomeError::Gene { index, field, value })
                }
            };
            *slot = ActuatorGene {
                f: check("f", gene.f)?,
                phi: check("phi", gene.phi)?,
            };
        }
        Genome::new(raw.p_kpa, raw.theta_deg, actuators)
    }
}

impl From<Genome> for RawGenome {
    fn from(g: Genome) -> Self {
        RawGenome {
            p_kpa: g.p_kpa,
            theta_deg: g.theta_deg,
            actuators: g
                .actuators
                .iter()
                .map(|a| RawGene {
                    f: a.f as i64,
                    phi: a.phi as i64,
                })
                .collect(),
        }
    }
}

impl Genome {
    pub fn new(
        p_kpa: f64,
        theta_deg: f64,
        actuators: [ActuatorGene; ACTUATOR_COUNT],
    ) -> Result<Self, GenomeError> {
        if !(0.0..=MAX_PRESSURE_KPA).contains(&p_kpa) {
            return Err(GenomeError::Pressure(p_kpa));
        }
        if !(0.0..=MAX_THETA_DEG).contains(&theta_deg) {
            return Err(GenomeError::Theta(theta_deg));
        }
        for (index, a) in actuators.iter().enumerate() {
            for (field, value) in [("f", a.f), ("phi", a.phi)] {
                if value > GENE_MAX {
                    return Err(GenomeError::Gene {
                        index,
                        field,
                        value: value as i64,
                    });
                }
            }
        }
        Ok(Self {
            p_kpa,
            theta_deg,
            actuators,
        })
    }

    pub fn p_kpa(&self) -> f64 {
        self.p_kpa
    }

    pub fn theta_deg(&self) -> f64 {
        self.theta_deg
    }

    pub fn actuators(&self) -> &[ActuatorGene; ACTUATOR_COUNT] {
        &self.actuators
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("genome serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

/// How a genome is expanded to the full schedule width.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleMode {
    /// Decode every column of the schedule directly.
    #[default]
    Full,
    /// Decode half the columns and play them twice.
    Repeated,
}

/// Binary actuation schedule: rows 0-7 drive the bladders, rows 8-9 the feet.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActuationMatrix {
    columns: usize,
    rows: [u64; ACTUATOR_COUNT],
}

impl fmt::Debug for ActuationMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ActuationMatrix {}x{}", ACTUATOR_COUNT, self.columns)?;
        for r in 0..ACTUATOR_COUNT {
            let row: String = (0..self.columns)
                .map(|c| if self.get(r, c) { '1' } else { '0' })
                .collect();
            writeln!(f, "  {row}")?;
        }
        Ok(())
    }
}

impl ActuationMatrix {
    pub const MAX_COLUMNS: usize = 64;

    pub fn zeros(columns: usize) -> Self {
        assert!(columns <= Self::MAX_COLUMNS, "at most 64 columns");
        Self {
            columns,
            rows: [0; ACTUATOR_COUNT],
        }
    }

    /// Builds a matrix from row strings of '0'/'1'.
    pub fn from_rows(rows: &[&str; ACTUATOR_COUNT]) -> Self {
        let mut m = Self::zeros(rows[0].len());
        for (r, text) in rows.iter().enumerate() {
            assert_eq!(text.len(), m.columns, "ragged actuation rows");
            for (c, ch) in text.chars().enumerate() {
                m.set(r, c, ch == '1');
            }
        }
        m
    }

    pub fn columns(&self) -> usize {
        self.columns
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        col < self.columns && self.rows[row] >> col & 1 == 1
    }

    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        assert!(col < self.columns);
        if on {
            self.rows[row] |= 1 << col;
        } else {
            self.rows[row] &= !(1 << col);
        }
    }

    pub fn row(&self, row: usize) -> Vec<bool> {
        (0..self.columns).map(|c| self.get(row, c)).collect()
    }

    pub fn column(&self, col: usize) -> [bool; ACTUATOR_COUNT] {
        std::array::from_fn(|r| self.get(r, col))
    }

    pub fn is_zero(&self) -> bool {
        self.rows.iter().all(|r| *r == 0)
    }
}

/// Decodes one actuator row: ones at `phi, phi + (f+1), phi + 2(f+1), ...`.
pub fn decode_row(gene: ActuatorGene, columns: usize) -> u64 {
    let stride = gene.f as usize + 1;
    let mut bits = 0u64;
    let mut c = gene.phi as usize;
    while c < columns {
        bits |= 1 << c;
        c += stride;
    }
    bits
}

pub fn decode(genome: &Genome, columns: usize) -> ActuationMatrix {
    decode_with(genome, columns, ScheduleMode::Full)
}

pub fn decode_with(genome: &Genome, columns: usize, mode: ScheduleMode) -> ActuationMatrix {
    let mut m = ActuationMatrix::zeros(columns);
    match mode {
        ScheduleMode::Full => {
            for (r, gene) in genome.actuators.iter().enumerate() {
                m.rows[r] = decode_row(*gene, columns);
            }
        }
        ScheduleMode::Repeated => {
            let half = columns / 2;
            for (r, gene) in genome.actuators.iter().enumerate() {
                let bits = decode_row(*gene, half);
                m.rows[r] = bits | bits << half;
            }
        }
    }
    m
}

/// Uniform random genome.
pub fn random_genome<R: Rng + ?Sized>(rng: &mut R) -> Genome {
    let p_kpa = rng.random_range(0.0..=MAX_PRESSURE_KPA);
    let theta_deg = rng.random_range(0.0..=MAX_THETA_DEG);
    let actuators = std::array::from_fn(|_| ActuatorGene {
        f: rng.random_range(0..=GENE_MAX),
        phi: rng.random_range(0..=GENE_MAX),
    });
    Genome {
        p_kpa,
        theta_deg,
        actuators,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MutationParams {
    pub sigma_p: f64,
    pub sigma_theta: f64,
    pub sigma_gene: f64,
}

impl Default for MutationParams {
    fn default() -> Self {
        Self {
            sigma_p: 1.2,
            sigma_theta: 9.0,
            sigma_gene: 1.6,
        }
    }
}

impl MutationParams {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("sigma_p", self.sigma_p),
            ("sigma_theta", self.sigma_theta),
            ("sigma_gene", self.sigma_gene),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

/// Which parameter sets a search may change.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamMask {
    pub orientation: bool,
    pub shape: bool,
    pub control: bool,
}

impl ParamMask {
    pub const ALL: ParamMask = ParamMask {
        orientation: true,
        shape: true,
        control: true,
    };

    pub fn any_free(&self) -> bool {
        self.orientation || self.shape || self.control
    }
}

/// Takes free fields from `genome` and fixed fields from `template`.
pub fn apply_mask(genome: &Genome, template: &Genome, mask: ParamMask) -> Genome {
    Genome {
        p_kpa: if mask.shape { genome.p_kpa } else { template.p_kpa },
        theta_deg: if mask.orientation {
            genome.theta_deg
        } else {
            template.theta_deg
        },
        actuators: if mask.control {
            genome.actuators
        } else {
            template.actuators
        },
    }
}

/// Uniform random genome over the free fields; fixed fields copied from
/// `template`.
pub fn random_masked<R: Rng + ?Sized>(rng: &mut R, template: &Genome, mask: ParamMask) -> Genome {
    apply_mask(&random_genome(rng), template, mask)
}

fn perturb<R: Rng + ?Sized>(rng: &mut R, value: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return value;
    }
    value + Normal::new(0.0, sigma).expect("sigma is finite").sample(rng)
}

fn mutate_gene<R: Rng + ?Sized>(rng: &mut R, value: u8, sigma: f64) -> u8 {
    perturb(rng, value as f64, sigma).round().clamp(0.0, GENE_MAX as f64) as u8
}

/// Gaussian mutation of every free parameter, clamped to bounds. Integer
/// genes are rounded to the nearest value before clamping.
pub fn mutate<R: Rng + ?Sized>(
    genome: &Genome,
    params: &MutationParams,
    rng: &mut R,
    mask: ParamMask,
) -> Genome {
    let mut out = genome.clone();
    if mask.shape {
        out.p_kpa = perturb(rng, genome.p_kpa, params.sigma_p).clamp(0.0, MAX_PRESSURE_KPA);
    }
    if mask.orientation {
        out.theta_deg = perturb(rng, genome.theta_deg, params.sigma_theta).clamp(0.0, MAX_THETA_DEG);
    }
    if mask.control {
        for gene in out.actuators.iter_mut() {
            gene.f = mutate_gene(rng, gene.f, params.sigma_gene);
            gene.phi = mutate_gene(rng, gene.phi, params.sigma_gene);
        }
    }
    out
}

/// A hand-designed gait: fixed shape, orientation and explicit schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct Gait {
    pub name: &'static str,
    pub p_kpa: f64,
    pub theta_deg: f64,
    pub schedule: ActuationMatrix,
}

/// Order in which bladders meet the ground while the inflated body rolls
/// forward, starting with the one just behind the initial contact patch.
/// Bladder ids run around the body (top strips, then bottom strips reversed).
pub const ROLLING_ORDER: [usize; BLADDER_COUNT] = [6, 5, 4, 3, 2, 1, 0, 7];

/// Fully inflated, width-wise rolling: one bladder per column, following the
/// ground-contact order, twice around the body.
pub fn hand_designed_rolling() -> Gait {
    let mut schedule = ActuationMatrix::zeros(DEFAULT_COLUMNS);
    for col in 0..DEFAULT_COLUMNS {
        schedule.set(ROLLING_ORDER[col % BLADDER_COUNT], col, true);
    }
    Gait {
        name: "rolling",
        p_kpa: 12.0,
        theta_deg: 0.0,
        schedule,
    }
}

/// Rows of the upward-facing bladders used by the inchworm gait.
pub const INCHWORM_BLADDERS: [usize; 4] = [0, 1, 2, 3];
pub const REAR_FOOT_ROW: usize = 8;
pub const FRONT_FOOT_ROW: usize = 9;

/// Flat, length-wise inching: even columns grip with the front foot while the
/// upper bladders arch the body; odd columns grip with the rear foot while the
/// bladders deflate.
pub fn hand_designed_inchworm() -> Gait {
    let mut schedule = ActuationMatrix::zeros(DEFAULT_COLUMNS);
    for col in 0..DEFAULT_COLUMNS {
        let contract = col % 2 == 0;
        for row in INCHWORM_BLADDERS {
            schedule.set(row, col, contract);
        }
        schedule.set(FRONT_FOOT_ROW, col, contract);
        schedule.set(REAR_FOOT_ROW, col, !contract);
    }
    Gait {
        name: "inchworm",
        p_kpa: 0.0,
        theta_deg: 90.0,
        schedule,
    }
}
