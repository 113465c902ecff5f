//! Flat and inclined environments, robot placement and fitness evaluation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{decode_with, ActuationMatrix, Gait, Genome, ScheduleMode, ACTUATOR_COUNT};
use crate::lattice::{ContactModel, LatticeError, MaterialParams, Vec3};
use crate::robot::{RobotError, RobotInstance, RobotSpec, BLADDER_COUNT, FOOT_COUNT};

pub const GRAVITY: f64 = 9.80665;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("incline angle {0} deg outside [0, 90)")]
    InclineOutOfRange(f64),
    #[error("orientation {0} deg outside [0, 90]")]
    ThetaOutOfRange(f64),
    #[error("invalid eval config: {0}")]
    InvalidConfig(String),
    #[error("friction pair mu_i = {mu_i}, mu_u = {mu_u} is infeasible")]
    InfeasibleFriction { mu_i: f64, mu_u: f64 },
    #[error("simulation diverged at step {step} (p = {p_kpa} kPa, theta = {theta_deg} deg)")]
    Diverged {
        step: u64,
        p_kpa: f64,
        theta_deg: f64,
    },
    #[error(transparent)]
    Robot(#[from] RobotError),
}

/// Gravity rotated away from the floor normal by the incline angle.
pub fn gravity_for_incline(alpha_deg: f64) -> Result<Vec3, EnvError> {
    if !(0.0..90.0).contains(&alpha_deg) {
        return Err(EnvError::InclineOutOfRange(alpha_deg));
    }
    let a = alpha_deg.to_radians();
    Ok(Vec3::new(GRAVITY * a.sin(), 0.0, -GRAVITY * a.cos()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub incline_deg: f64,
    pub gravity: Vec3,
    /// Unit direction in the floor plane along which fitness is scored.
    pub goal: Vec3,
}

impl Environment {
    pub fn flat() -> Self {
        Self::incline(0.0).expect("zero incline is valid")
    }

    /// Gravity's floor-plane component points along +x, so uphill is -x.
    pub fn incline(alpha_deg: f64) -> Result<Self, EnvError> {
        Ok(Self {
            incline_deg: alpha_deg,
            gravity: gravity_for_incline(alpha_deg)?,
            goal: -Vec3::x(),
        })
    }

    /// Parses `flat` or `incline:<degrees>`.
    pub fn parse(text: &str) -> Result<Self, EnvError> {
        let text = text.trim();
        if text == "flat" {
            return Ok(Self::flat());
        }
        let deg = text
            .strip_prefix("incline:")
            .and_then(|d| d.trim().parse::<f64>().ok())
            .ok_or_else(|| EnvError::InvalidConfig(format!("unknown environment '{text}'")))?;
        Self::incline(deg)
    }

    pub fn label(&self) -> String {
        if self.incline_deg == 0.0 {
            "flat".into()
        } else {
            format!("incline:{}", self.incline_deg)
        }
    }
}

/// Body yaw (rad) for an orientation angle. At 0 the body's width axis
/// points along the goal, so the robot rolls width-wise; at 90 its length
/// axis does, with the front foot leading.
pub fn yaw_for_theta(theta_deg: f64) -> f64 {
    (90.0 + theta_deg).to_radians()
}

pub fn place_robot(robot: &mut RobotInstance, theta_deg: f64) -> Result<(), EnvError> {
    if !(0.0..=90.0).contains(&theta_deg) {
        return Err(EnvError::ThetaOutOfRange(theta_deg));
    }
    robot.pose_on_floor(yaw_for_theta(theta_deg));
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub dt: f64,
    pub steps_per_column: u64,
    pub columns: usize,
    pub settle_steps: u64,
    /// Physics steps per bladder expansion increment. Each increment adds
    /// one step's worth of the published expansion rates.
    pub actuation_interval: u64,
    pub schedule_mode: ScheduleMode,
    /// Foot friction override as (gripping, released).
    pub foot_friction: Option<(f64, f64)>,
    /// Trajectory sampling period in steps.
    pub trajectory_interval: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            dt: 1.06e-4,
            steps_per_column: 11670,
            columns: 16,
            settle_steps: 11670,
            actuation_interval: 100,
            schedule_mode: ScheduleMode::Full,
            foot_friction: None,
            trajectory_interval: 100,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::InvalidConfig(m.into()));
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if self.steps_per_column == 0 {
            return bad("steps_per_column must be >= 1");
        }
        if self.columns == 0 || self.columns > ActuationMatrix::MAX_COLUMNS {
            return bad("columns must be in 1..=64");
        }
        if self.actuation_interval == 0 {
            return bad("actuation_interval must be >= 1");
        }
        if self.trajectory_interval == 0 {
            return bad("trajectory_interval must be >= 1");
        }
        if let Some((mu_i, mu_u)) = self.foot_friction {
            if !(mu_u.is_finite() && mu_i.is_finite() && mu_u >= 0.0 && mu_i >= mu_u) {
                return Err(EnvError::InfeasibleFriction { mu_i, mu_u });
            }
        }
        Ok(())
    }

    pub fn total_steps(&self) -> u64 {
        self.steps_per_column * self.columns as u64
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.total_steps() as f64
    }
}

/// Physical model shared by every evaluation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Model {
    pub material: MaterialParams,
    pub robot: RobotSpec,
    pub contact: ContactModel,
}

impl Model {
    pub fn validate(&self) -> Result<(), EnvError> {
        self.material.validate().map_err(RobotError::from)?;
        self.robot.validate()?;
        self.contact.validate().map_err(RobotError::from)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    /// Steps since the start of the schedule.
    pub step: u64,
    pub time: f64,
    pub com: Vec3,
    pub goal_displacement: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitnessResult {
    /// Centre-of-mass travel along the goal direction (m).
    pub displacement: f64,
    /// Body lengths per second.
    pub speed: f64,
    pub body_length: f64,
    pub duration: f64,
    /// Samples every `trajectory_interval` steps, starting at the reference pose.
    pub trajectory: Vec<TrajectorySample>,
    /// Centre of mass at the reference pose and at the end of every column.
    pub column_com: Vec<Vec3>,
}

/// A fully specified actuation program.
#[derive(Clone, Debug, PartialEq)]
pub struct Program {
    pub p_kpa: f64,
    pub theta_deg: f64,
    pub schedule: ActuationMatrix,
}

impl Program {
    pub fn from_genome(genome: &Genome, cfg: &EvalConfig) -> Self {
        Self {
            p_kpa: genome.p_kpa(),
            theta_deg: genome.theta_deg(),
            schedule: decode_with(genome, cfg.columns, cfg.schedule_mode),
        }
    }

    pub fn from_gait(gait: &Gait) -> Self {
        Self {
            p_kpa: gait.p_kpa,
            theta_deg: gait.theta_deg,
            schedule: gait.schedule,
        }
    }
}

pub fn evaluate(genome: &Genome, env: &Environment, cfg: &EvalConfig) -> Result<FitnessResult, EnvError> {
    evaluate_with(&Model::default(), &Program::from_genome(genome, cfg), env, cfg)
}

/// Runs a program: settle, record the reference pose, play every column.
pub fn evaluate_with(
    model: &Model,
    program: &Program,
    env: &Environment,
    cfg: &EvalConfig,
) -> Result<FitnessResult, EnvError> {
    cfg.validate()?;
    if program.schedule.columns() != cfg.columns {
        return Err(EnvError::InvalidConfig(format!(
            "schedule has {} columns, config expects {}",
            program.schedule.columns(),
            cfg.columns
        )));
    }
    let mut material = model.material.clone();
    if let Some((mu_i, mu_u)) = cfg.foot_friction {
        material.friction_high = mu_i;
        material.friction_low = mu_u;
    }
    let mut robot = RobotInstance::new(&model.robot, &material)?;
    place_robot(&mut robot, program.theta_deg)?;
    for foot in 0..FOOT_COUNT {
        robot.set_foot_state(foot, false)?;
    }

    let diverged = |err: RobotError| match err {
        RobotError::Lattice(LatticeError::Diverged { step }) => EnvError::Diverged {
            step,
            p_kpa: program.p_kpa,
            theta_deg: program.theta_deg,
        },
        other => EnvError::Robot(other),
    };

    // The core is pressurised gradually over the first half of the settle
    // phase; a step change would launch the body off the floor.
    let ramp = cfg.settle_steps / 2;
    for s in 0..cfg.settle_steps {
        let fraction = if s < ramp { (s + 1) as f64 / ramp as f64 } else { 1.0 };
        robot.apply_core_pressure(program.p_kpa * fraction)?;
        robot.step(cfg.dt, env.gravity, &model.contact).map_err(diverged)?;
    }
    robot.apply_core_pressure(program.p_kpa)?;

    let origin = robot.lattice().center_of_mass();
    let sample = |step: u64, com: Vec3| TrajectorySample {
        step,
        time: step as f64 * cfg.dt,
        com,
        goal_displacement: (com - origin).dot(&env.goal),
    };
    let mut trajectory = vec![sample(0, origin)];
    let mut column_com = vec![origin];
    let mut step = 0u64;
    for col in 0..cfg.columns {
        let active: [bool; ACTUATOR_COUNT] = program.schedule.column(col);
        for foot in 0..FOOT_COUNT {
            robot.set_foot_state(foot, active[BLADDER_COUNT + foot])?;
        }
        for s in 0..cfg.steps_per_column {
            if s % cfg.actuation_interval == 0 {
                for (id, inflate) in active.iter().take(BLADDER_COUNT).enumerate() {
                    robot.bladder_expansion_step(id, *inflate)?;
                }
            }
            robot.step(cfg.dt, env.gravity, &model.contact).map_err(diverged)?;
            step += 1;
            if step % cfg.trajectory_interval == 0 {
                trajectory.push(sample(step, robot.lattice().center_of_mass()));
            }
        }
        column_com.push(robot.lattice().center_of_mass());
    }

    let end = robot.lattice().center_of_mass();
    let displacement = (end - origin).dot(&env.goal);
    let body_length = robot.body_length();
    let duration = cfg.duration();
    Ok(FitnessResult {
        displacement,
        speed: displacement / (body_length * duration),
        body_length,
        duration,
        trajectory,
        column_com,
    })
}
