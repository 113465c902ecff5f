//! The shape-changing robot: a sealed two-sheet envelope with an inflatable
//! core, eight surface bladders and two variable-friction feet, expressed as a
//! labelled voxel lattice.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{
    build_lattice, Axis, ContactModel, Lattice, LatticeError, MaterialParams, Occupancy, Rotation,
    Vec3, VoxelId,
};

/// Core pressure range upper bound (kPa).
pub const MAX_PRESSURE_KPA: f64 = 12.0;
/// Outward force on each interior face at maximum pressure (N).
pub const MAX_CORE_FORCE: f64 = 1.4;
pub const BLADDER_COUNT: usize = 8;
pub const FOOT_COUNT: usize = 2;

const LAYERS: usize = 5;
const BOTTOM_OUTER: i32 = 0;
const BOTTOM_SHEET: i32 = 1;
const RING: i32 = 2;
const TOP_SHEET: i32 = 3;
const TOP_OUTER: i32 = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RobotError {
    #[error("invalid robot spec: {0}")]
    InvalidSpec(String),
    #[error("core pressure {0} kPa outside [0, 12]")]
    PressureOutOfRange(f64),
    #[error("core force {0} N outside [0, 1.4]")]
    CoreForceOutOfRange(f64),
    #[error("unknown bladder {0}")]
    UnknownBladder(usize),
    #[error("unknown foot {0}")]
    UnknownFoot(usize),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// Where the eight bladder strips sit on the envelope.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BladderLayout {
    /// Strips run the full body length; four side by side across the top
    /// sheet and four across the bottom sheet, so that the inflated body is
    /// ringed by bladders around its long axis.
    Wrapped,
    /// Eight strips spanning the width of the top sheet, spaced along the
    /// body length.
    Banded,
}

/// Linear y-expansion rate as a function of core force per voxel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct YExpansion {
    /// Rate at zero core force (m/step).
    pub at_min_force: f64,
    /// Rate at maximum core force (m/step).
    pub at_max_force: f64,
}

impl Default for YExpansion {
    fn default() -> Self {
        Self {
            at_min_force: 1.76e-4,
            at_max_force: 3e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotSpec {
    pub body_length_voxels: usize,
    pub body_width_voxels: usize,
    pub bladder_layout: BladderLayout,
    /// Width of each bladder strip in voxels.
    pub bladder_strip_width: usize,
    /// Bladder expansion along its surface normal (m/step).
    pub z_rate: f64,
    /// Bladder expansion across the strip (m/step).
    pub x_rate: f64,
    pub y_expansion: YExpansion,
    /// Friction of voxels outside the feet.
    pub body_friction: f64,
}

impl Default for RobotSpec {
    fn default() -> Self {
        Self {
            body_length_voxels: 15,
            body_width_voxels: 10,
            bladder_layout: BladderLayout::Wrapped,
            bladder_strip_width: 2,
            z_rate: 3e-4,
            x_rate: 1.5e-5,
            y_expansion: YExpansion::default(),
            body_friction: 1.0,
        }
    }
}

impl RobotSpec {
    pub fn validate(&self) -> Result<(), RobotError> {
        let bad = |m: String| Err(RobotError::InvalidSpec(m));
        if self.body_length_voxels < 3 {
            return bad("body_length_voxels must be >= 3".into());
        }
        if self.body_width_voxels < 1 {
            return bad("body_width_voxels must be >= 1".into());
        }
        if self.bladder_strip_width < 1 {
            return bad("bladder_strip_width must be >= 1".into());
        }
        let (axis_len, strips, axis_name) = match self.bladder_layout {
            BladderLayout::Wrapped => (self.body_width_voxels, BLADDER_COUNT / 2, "width"),
            BladderLayout::Banded => (self.body_length_voxels, BLADDER_COUNT, "length"),
        };
        if strips * self.bladder_strip_width > axis_len {
            return bad(format!(
                "{strips} bladder strips of width {} do not fit a {axis_name} of {axis_len} voxels",
                self.bladder_strip_width
            ));
        }
        for (name, v) in [
            ("z_rate", self.z_rate),
            ("x_rate", self.x_rate),
            ("y_expansion.at_min_force", self.y_expansion.at_min_force),
            ("y_expansion.at_max_force", self.y_expansion.at_max_force),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0"));
            }
        }
        if self.z_rate <= 0.0 {
            return bad("z_rate must be > 0".into());
        }
        if !(self.body_friction.is_finite() && self.body_friction >= 0.0) {
            return bad("body_friction must be >= 0".into());
        }
        Ok(())
    }

    /// Flattened length of the body (m).
    pub fn body_length(&self, material: &MaterialParams) -> f64 {
        self.body_length_voxels as f64 * material.beam_length
    }

    /// Core force per voxel face for a pressure (N).
    pub fn core_force(pressure_kpa: f64) -> f64 {
        MAX_CORE_FORCE * (pressure_kpa / MAX_PRESSURE_KPA)
    }

    /// Per-step bladder expansion across the body's y axis for a core force.
    pub fn y_expansion_rate(&self, core_force: f64) -> Result<f64, RobotError> {
        if !(0.0..=MAX_CORE_FORCE).contains(&core_force) {
            return Err(RobotError::CoreForceOutOfRange(core_force));
        }
        let (a, b) = (self.y_expansion.at_min_force, self.y_expansion.at_max_force);
        Ok((b - a) * (core_force / MAX_CORE_FORCE) + a)
    }
}

/// Default-spec y-expansion rate.
pub fn y_expansion_rate(core_force: f64) -> Result<f64, RobotError> {
    RobotSpec::default().y_expansion_rate(core_force)
}

/// Start cells of `count` equal strips of `width` cells spread over `span`.
fn strip_starts(span: usize, count: usize, width: usize) -> Vec<usize> {
    let pitch = span as f64 / count as f64;
    let pad = (pitch - width as f64) / 2.0;
    (0..count)
        .map(|i| {
            let start = (i as f64 * pitch + pad).round() as usize;
            start.min(span - width)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BladderGroup {
    pub voxels: Vec<VoxelId>,
    /// Lattice axes of the bladder's local x, y and z.
    pub local_axes: [Axis; 3],
    beams: Vec<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct CoreState {
    pub pressure_kpa: f64,
    pub per_voxel_force: f64,
}

/// Bladder inflation is tracked as a step count so that equal numbers of
/// inflate and deflate steps cancel exactly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct BladderState {
    pub inflating: bool,
    pub progress: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct FootState {
    pub grip: bool,
    pub friction: f64,
}

/// A face of the sealed core: the voxel it belongs to and its outward normal
/// (away from the cavity) in the voxel's local frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoreFace {
    pub voxel: VoxelId,
    pub normal: Vec3,
}

#[derive(Clone, Debug)]
pub struct RobotInstance {
    spec: RobotSpec,
    lattice: Lattice,
    bladders: Vec<BladderGroup>,
    feet: [Vec<VoxelId>; FOOT_COUNT],
    core_faces: Vec<CoreFace>,
    core: CoreState,
    bladder_state: [BladderState; BLADDER_COUNT],
    foot_state: [FootState; FOOT_COUNT],
    /// Construction positions, centred on the centre of mass.
    body_positions: Vec<Vec3>,
    body_length: f64,
}

/// Voxel layers, from the ground up: outer bottom (feet and, when wrapped,
/// bottom bladders), bottom sheet, perimeter ring, top sheet, top bladders.
fn envelope_grid(spec: &RobotSpec) -> (Occupancy, Vec<Vec<[i32; 3]>>, [Vec<[i32; 3]>; 2]) {
    let (nl, nw) = (spec.body_length_voxels, spec.body_width_voxels);
    let mut grid = Occupancy::empty(nl, nw, LAYERS);
    for x in 0..nl as i32 {
        for y in 0..nw as i32 {
            grid.set([x, y, BOTTOM_SHEET], true);
            grid.set([x, y, TOP_SHEET], true);
            let edge = x == 0 || y == 0 || x == nl as i32 - 1 || y == nw as i32 - 1;
            if edge {
                grid.set([x, y, RING], true);
            }
        }
    }
    let feet: [Vec<[i32; 3]>; 2] = [0, nl as i32 - 1].map(|x| {
        (0..nw as i32).map(|y| [x, y, BOTTOM_OUTER]).collect()
    });
    for cell in feet.iter().flatten() {
        grid.set(*cell, true);
    }

    let sw = spec.bladder_strip_width;
    let mut bladders = Vec::with_capacity(BLADDER_COUNT);
    match spec.bladder_layout {
        BladderLayout::Wrapped => {
            let starts = strip_starts(nw, BLADDER_COUNT / 2, sw);
            let interior = 1..nl as i32 - 1;
            // Top strips in increasing y, then bottom strips in decreasing y,
            // so that bladder ids run around the body's circumference.
            for &s in &starts {
                bladders.push(strip_cells(interior.clone(), s..s + sw, TOP_OUTER, false));
            }
            for &s in starts.iter().rev() {
                bladders.push(strip_cells(interior.clone(), s..s + sw, BOTTOM_OUTER, false));
            }
        }
        BladderLayout::Banded => {
            for s in strip_starts(nl, BLADDER_COUNT, sw) {
                bladders.push(strip_cells(0..nw as i32, s..s + sw, TOP_OUTER, true));
            }
        }
    }
    for cell in bladders.iter().flatten() {
        grid.set(*cell, true);
    }
    (grid, bladders, feet)
}

fn strip_cells(
    along: std::ops::Range<i32>,
    across: std::ops::Range<usize>,
    z: i32,
    banded: bool,
) -> Vec<[i32; 3]> {
    let mut cells = Vec::new();
    for a in along {
        for c in across.clone() {
            let c = c as i32;
            cells.push(if banded { [c, a, z] } else { [a, c, z] });
        }
    }
    cells
}

/// Faces between occupied cells and enclosed empty cells.
fn core_faces(grid: &Occupancy, lattice: &Lattice) -> Vec<CoreFace> {
    let [nx, ny, nz] = grid.dims();
    let (px, py, pz) = (nx as i32 + 2, ny as i32 + 2, nz as i32 + 2);
    let inside = |c: [i32; 3]| c[0] >= -1 && c[1] >= -1 && c[2] >= -1 && c[0] < px - 1 && c[1] < py - 1 && c[2] < pz - 1;
    let key = |c: [i32; 3]| ((c[0] + 1) + px * ((c[1] + 1) + py * (c[2] + 1))) as usize;
    let mut outside = vec![false; (px * py * pz) as usize];
    let mut queue = VecDeque::from([[-1, -1, -1]]);
    outside[key([-1, -1, -1])] = true;
    const DIRS: [[i32; 3]; 6] = [
        [1, 0, 0],
        [-1, 0, 0],
        [0, 1, 0],
        [0, -1, 0],
        [0, 0, 1],
        [0, 0, -1],
    ];
    while let Some(c) = queue.pop_front() {
        for d in DIRS {
            let n = [c[0] + d[0], c[1] + d[1], c[2] + d[2]];
            if inside(n) && !grid.get(n) && !outside[key(n)] {
                outside[key(n)] = true;
                queue.push_back(n);
            }
        }
    }
    let mut faces = Vec::new();
    for z in 0..nz as i32 {
        for y in 0..ny as i32 {
            for x in 0..nx as i32 {
                let c = [x, y, z];
                if grid.get(c) || outside[key(c)] {
                    continue;
                }
                for d in DIRS {
                    let n = [c[0] + d[0], c[1] + d[1], c[2] + d[2]];
                    if let Some(voxel) = lattice.voxel_at(n) {
                        faces.push(CoreFace {
                            voxel,
                            normal: Vec3::new(d[0] as f64, d[1] as f64, d[2] as f64),
                        });
                    }
                }
            }
        }
    }
    faces
}

pub fn instantiate_robot(spec: &RobotSpec, material: &MaterialParams) -> Result<RobotInstance, RobotError> {
    RobotInstance::new(spec, material)
}

impl RobotInstance {
    pub fn new(spec: &RobotSpec, material: &MaterialParams) -> Result<Self, RobotError> {
        spec.validate()?;
        let (grid, bladder_cells, foot_cells) = envelope_grid(spec);
        let mut lattice = build_lattice(&grid, material)?;
        let lookup = |cells: &[[i32; 3]]| -> Vec<VoxelId> {
            cells
                .iter()
                .map(|c| lattice.voxel_at(*c).expect("cell occupied"))
                .collect()
        };
        let local_axes = match spec.bladder_layout {
            BladderLayout::Wrapped => [Axis::Y, Axis::X, Axis::Z],
            BladderLayout::Banded => [Axis::X, Axis::Y, Axis::Z],
        };
        let bladders: Vec<BladderGroup> = bladder_cells
            .iter()
            .map(|cells| {
                let voxels = lookup(cells);
                let mut beams: Vec<usize> = voxels
                    .iter()
                    .flat_map(|v| lattice.incident_beams(*v).iter().copied())
                    .collect();
                beams.sort_unstable();
                beams.dedup();
                BladderGroup {
                    voxels,
                    local_axes,
                    beams,
                }
            })
            .collect();
        let feet = [lookup(&foot_cells[0]), lookup(&foot_cells[1])];
        let faces = core_faces(&grid, &lattice);

        let low = material.friction_low;
        for v in lattice.voxels_mut() {
            v.friction = spec.body_friction;
        }
        for id in feet.iter().flatten() {
            lattice.voxels_mut()[id.0].friction = low;
        }

        let com = lattice.center_of_mass();
        let body_positions = lattice.voxels().iter().map(|v| v.position - com).collect();
        Ok(Self {
            spec: spec.clone(),
            body_length: spec.body_length(material),
            lattice,
            bladders,
            feet,
            core_faces: faces,
            core: CoreState::default(),
            bladder_state: [BladderState::default(); BLADDER_COUNT],
            foot_state: [FootState { grip: false, friction: low }; FOOT_COUNT],
            body_positions,
        })
    }

    pub fn spec(&self) -> &RobotSpec {
        &self.spec
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn lattice_mut(&mut self) -> &mut Lattice {
        &mut self.lattice
    }

    pub fn bladders(&self) -> &[BladderGroup] {
        &self.bladders
    }

    pub fn feet(&self) -> &[Vec<VoxelId>; FOOT_COUNT] {
        &self.feet
    }

    pub fn core_faces(&self) -> &[CoreFace] {
        &self.core_faces
    }

    pub fn core(&self) -> CoreState {
        self.core
    }

    pub fn bladder_state(&self, id: usize) -> Option<BladderState> {
        self.bladder_state.get(id).copied()
    }

    pub fn foot_state(&self, id: usize) -> Option<FootState> {
        self.foot_state.get(id).copied()
    }

    pub fn apply_core_pressure(&mut self, pressure_kpa: f64) -> Result<(), RobotError> {
        if !(0.0..=MAX_PRESSURE_KPA).contains(&pressure_kpa) {
            return Err(RobotError::PressureOutOfRange(pressure_kpa));
        }
        self.core = CoreState {
            pressure_kpa,
            per_voxel_force: RobotSpec::core_force(pressure_kpa),
        };
        Ok(())
    }

    /// Current pressure forces in world coordinates, one entry per core face.
    pub fn core_face_forces(&self) -> Vec<Vec3> {
        let voxels = self.lattice.voxels();
        self.core_faces
            .iter()
            .map(|f| voxels[f.voxel.0].orientation * f.normal * self.core.per_voxel_force)
            .collect()
    }

    /// Inflation step count at which the bladder's z-expansion reaches the
    /// rest-dimension ceiling. All axes stop together there.
    fn max_progress(&self) -> f64 {
        let m = self.lattice.material();
        (m.max_dim() - m.beam_length) / self.spec.z_rate
    }

    fn expansion_rates(&self) -> Vec3 {
        let y = self
            .spec
            .y_expansion_rate(self.core.per_voxel_force)
            .expect("core force validated on entry");
        Vec3::new(self.spec.x_rate, y, self.spec.z_rate)
    }

    /// Accumulated expansion of a bladder along its local x, y, z (m).
    pub fn bladder_expansion(&self, id: usize) -> Option<Vec3> {
        let state = self.bladder_state.get(id)?;
        Some(self.expansion_rates() * state.progress)
    }

    /// One simulation step of bladder inflation (or deflation).
    pub fn bladder_expansion_step(&mut self, id: usize, inflate: bool) -> Result<(), RobotError> {
        if id >= BLADDER_COUNT {
            return Err(RobotError::UnknownBladder(id));
        }
        let state = self.bladder_state[id];
        let progress = if inflate {
            (state.progress + 1.0).min(self.max_progress())
        } else {
            (state.progress - 1.0).max(0.0)
        };
        self.bladder_state[id] = BladderState {
            inflating: inflate,
            progress,
        };
        if progress != state.progress {
            let local = self.expansion_rates() * (progress - state.progress);
            let group = &self.bladders[id];
            let mut delta = Vec3::zeros();
            for (k, axis) in group.local_axes.iter().enumerate() {
                delta[axis.index()] = local[k];
            }
            self.lattice.adjust_rest_dims(&group.beams, delta);
        }
        Ok(())
    }

    pub fn set_foot_state(&mut self, id: usize, grip: bool) -> Result<(), RobotError> {
        if id >= FOOT_COUNT {
            return Err(RobotError::UnknownFoot(id));
        }
        let m = self.lattice.material();
        let mu = if grip { m.friction_high } else { m.friction_low };
        self.lattice.set_voxel_friction(&self.feet[id], mu)?;
        self.foot_state[id] = FootState { grip, friction: mu };
        Ok(())
    }

    /// Centre of mass (m) and reference body length (m).
    pub fn measure_pose(&self) -> (Vec3, f64) {
        (self.lattice.center_of_mass(), self.body_length)
    }

    pub fn body_length(&self) -> f64 {
        self.body_length
    }

    /// Resets the kinematic state to the undeformed body, rotated about the
    /// vertical by `yaw` (rad), centred on the origin and resting on the floor.
    pub fn pose_on_floor(&mut self, yaw: f64) {
        let rot = Rotation::from_axis_angle(&Vec3::z_axis(), yaw);
        let radius = 0.5 * self.lattice.material().beam_length;
        let lowest = self
            .body_positions
            .iter()
            .map(|p| (rot * p).z)
            .fold(f64::INFINITY, f64::min);
        let lift = Vec3::new(0.0, 0.0, radius - lowest);
        for (v, p) in self.lattice.voxels_mut().iter_mut().zip(&self.body_positions) {
            v.position = rot * p + lift;
            v.velocity = Vec3::zeros();
            v.orientation = rot;
            v.angular_velocity = Vec3::zeros();
            v.in_contact = false;
        }
    }

    /// Applies the core pressure forces for the current geometry and advances
    /// the lattice one step.
    pub fn step(&mut self, dt: f64, gravity: Vec3, contact: &ContactModel) -> Result<(), RobotError> {
        self.lattice.clear_external_forces();
        let scale = self.core.per_voxel_force;
        if scale != 0.0 {
            let (voxels, ext) = self.lattice.voxels_and_external_forces_mut();
            for face in &self.core_faces {
                ext[face.voxel.0] += voxels[face.voxel.0].orientation * face.normal * scale;
            }
        }
        self.lattice.integrate_step(dt, gravity, contact)?;
        Ok(())
    }
}
