//! Cubic-voxel lattice dynamics.
//!
//! Every voxel is a point mass with a full rigid-body state (position,
//! velocity, orientation, angular velocity). Neighbouring voxels are joined by
//! Euler-Bernoulli beams whose forces are evaluated in a corotated frame that
//! sits halfway between the two endpoint orientations. Time integration is
//! symplectic Euler at a fixed step.

use std::collections::{HashMap, VecDeque};

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Rotation = UnitQuaternion<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("occupancy grid has no occupied cells")]
    EmptyGrid,
    #[error("occupancy grid is not connected ({components} components)")]
    Disconnected { components: usize },
    #[error("invalid material: {0}")]
    InvalidMaterial(String),
    #[error("invalid contact model: {0}")]
    InvalidContact(String),
    #[error("unknown voxel id {0}")]
    UnknownVoxel(usize),
    #[error("voxel set is empty")]
    EmptyVoxelSet,
    #[error("friction {mu} outside [{low}, {high}]")]
    FrictionOutOfRange { mu: f64, low: f64, high: f64 },
    #[error("timestep {dt} s exceeds stability bound {limit} s")]
    TimestepTooLarge { dt: f64, limit: f64 },
    #[error("simulation diverged at step {step}")]
    Diverged { step: u64 },
}

/// Index of a voxel inside its lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VoxelId(pub usize);

/// Lattice axis a beam runs along.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    fn unit(self) -> [i32; 3] {
        let mut u = [0; 3];
        u[self.index()] = 1;
        u
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialParams {
    /// Voxel pitch and initial beam length (m).
    pub beam_length: f64,
    /// Elastic modulus (Pa).
    pub modulus: f64,
    /// Density (kg/m^3).
    pub density: f64,
    pub damping_ratio: f64,
    pub friction_high: f64,
    pub friction_low: f64,
    /// Lower clamp on beam rest dimensions, as a multiple of `beam_length`.
    pub min_rest_factor: f64,
    /// Upper clamp on beam rest dimensions, as a multiple of `beam_length`.
    pub max_rest_factor: f64,
}

impl Default for MaterialParams {
    fn default() -> Self {
        Self {
            beam_length: 0.01,
            modulus: 4.0e5,
            density: 3000.0,
            damping_ratio: 1.0,
            friction_high: 2.0,
            friction_low: 1e-4,
            min_rest_factor: 0.25,
            max_rest_factor: 2.0,
        }
    }
}

impl MaterialParams {
    pub fn validate(&self) -> Result<(), LatticeError> {
        let positive = [
            ("beam_length", self.beam_length),
            ("modulus", self.modulus),
            ("density", self.density),
            ("damping_ratio", self.damping_ratio),
            ("friction_high", self.friction_high),
            ("min_rest_factor", self.min_rest_factor),
            ("max_rest_factor", self.max_rest_factor),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(LatticeError::InvalidMaterial(format!(
                    "{name} must be finite and > 0, got {value}"
                )));
            }
        }
        // Sweeps may push the low friction to zero or make the pair equal.
        if !(self.friction_low.is_finite() && self.friction_low >= 0.0) {
            return Err(LatticeError::InvalidMaterial(format!(
                "friction_low must be >= 0, got {}",
                self.friction_low
            )));
        }
        if self.friction_low > self.friction_high {
            return Err(LatticeError::InvalidMaterial(format!(
                "friction_low {} exceeds friction_high {}",
                self.friction_low, self.friction_high
            )));
        }
        if self.min_rest_factor >= 1.0 || self.max_rest_factor <= 1.0 {
            return Err(LatticeError::InvalidMaterial(
                "rest clamps must bracket the nominal length".into(),
            ));
        }
        Ok(())
    }

    pub fn voxel_mass(&self) -> f64 {
        self.density * self.beam_length.powi(3)
    }

    /// Axial stiffness of a nominal beam, `E * A / l = E * l`.
    pub fn axial_stiffness(&self) -> f64 {
        self.modulus * self.beam_length
    }

    /// Largest accepted timestep, `0.5 * sqrt(m / k_axial)`.
    pub fn max_timestep(&self) -> f64 {
        0.5 * (self.voxel_mass() / self.axial_stiffness()).sqrt()
    }

    pub fn min_dim(&self) -> f64 {
        self.min_rest_factor * self.beam_length
    }

    pub fn max_dim(&self) -> f64 {
        self.max_rest_factor * self.beam_length
    }
}

/// Penalty floor contact at `z = 0` with Coulomb friction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContactModel {
    /// Normal penalty stiffness (N/m).
    pub penalty_stiffness: f64,
    /// Damping ratio of the normal penalty spring.
    pub damping_ratio: f64,
}

impl Default for ContactModel {
    fn default() -> Self {
        Self {
            penalty_stiffness: 1.0e4,
            damping_ratio: 1.0,
        }
    }
}

impl ContactModel {
    pub fn validate(&self) -> Result<(), LatticeError> {
        if !(self.penalty_stiffness.is_finite() && self.penalty_stiffness > 0.0) {
            return Err(LatticeError::InvalidContact(
                "penalty_stiffness must be > 0".into(),
            ));
        }
        if !(self.damping_ratio.is_finite() && self.damping_ratio >= 0.0) {
            return Err(LatticeError::InvalidContact(
                "damping_ratio must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Dense occupancy grid used to build a lattice.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Occupancy {
    dims: [usize; 3],
    cells: Vec<bool>,
}

impl Occupancy {
    pub fn empty(nx: usize, ny: usize, nz: usize) -> Self {
        Self {
            dims: [nx, ny, nz],
            cells: vec![false; nx * ny * nz],
        }
    }

    pub fn filled(nx: usize, ny: usize, nz: usize) -> Self {
        Self {
            dims: [nx, ny, nz],
            cells: vec![true; nx * ny * nz],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    fn offset(&self, idx: [i32; 3]) -> Option<usize> {
        let [nx, ny, nz] = self.dims;
        let in_range = |v: i32, n: usize| v >= 0 && (v as usize) < n;
        if in_range(idx[0], nx) && in_range(idx[1], ny) && in_range(idx[2], nz) {
            Some(idx[0] as usize + nx * (idx[1] as usize + ny * idx[2] as usize))
        } else {
            None
        }
    }

    pub fn get(&self, idx: [i32; 3]) -> bool {
        self.offset(idx).is_some_and(|o| self.cells[o])
    }

    /// Marks a cell. Out-of-range indices are ignored.
    pub fn set(&mut self, idx: [i32; 3], occupied: bool) {
        if let Some(o) = self.offset(idx) {
            self.cells[o] = occupied;
        }
    }

    /// Occupied cells in x-fastest order.
    pub fn occupied(&self) -> impl Iterator<Item = [i32; 3]> + '_ {
        let [nx, ny, nz] = self.dims;
        (0..nz).flat_map(move |z| {
            (0..ny).flat_map(move |y| {
                (0..nx).filter_map(move |x| {
                    let idx = [x as i32, y as i32, z as i32];
                    self.get(idx).then_some(idx)
                })
            })
        })
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Voxel {
    pub grid_index: [i32; 3],
    pub position: Vec3,
    pub velocity: Vec3,
    pub orientation: Rotation,
    /// World-frame angular velocity (rad/s).
    pub angular_velocity: Vec3,
    pub mass: f64,
    /// Rotational inertia of a solid cube about any axis through its centre.
    pub inertia: f64,
    pub friction: f64,
    pub in_contact: bool,
}

impl Voxel {
    /// Orientation as a rotation vector (rad).
    pub fn rotation_vector(&self) -> Vec3 {
        self.orientation.scaled_axis()
    }

    fn is_finite(&self) -> bool {
        let finite = |v: &Vec3| v.iter().all(|c| c.is_finite());
        finite(&self.position)
            && finite(&self.velocity)
            && finite(&self.angular_velocity)
            && self.orientation.coords.iter().all(|c| c.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Beam {
    /// Endpoint on the negative side of the beam axis.
    pub endpoint_a: VoxelId,
    /// Endpoint on the positive side of the beam axis.
    pub endpoint_b: VoxelId,
    pub axis: Axis,
    /// Rest dimensions along the lattice x, y, z axes (m). The component along
    /// `axis` is the rest length; the others describe the cross-section.
    pub rest_dims: Vec3,
    pub elastic_modulus: f64,
    pub damping_ratio: f64,
    pub cross_section_side: f64,
}

impl Beam {
    pub fn rest_length(&self) -> f64 {
        self.rest_dims[self.axis.index()]
    }
}

/// Per-step stiffness and damping coefficients for one beam.
#[derive(Clone, Copy, Debug)]
struct BeamCoefficients {
    axial: f64,
    /// 12 EI / L^3
    shear: f64,
    /// 6 EI / L^2
    coupling: f64,
    /// 2 EI / L
    bend: f64,
    /// Torsion stiffness for the relative twist, G J / L.
    torsion: f64,
    linear_damping: f64,
    angular_damping: f64,
}

impl BeamCoefficients {
    fn new(beam: &Beam, reduced_mass: f64, reduced_inertia: f64) -> Self {
        let length = beam.rest_length();
        let side = beam.cross_section_side;
        let e = beam.elastic_modulus;
        let area = side * side;
        let ei = e * side.powi(4) / 12.0;
        let axial = e * area / length;
        // Poisson ratio taken as zero: G J / L = E a^4 / (12 L) = EI / L.
        let torsion = ei / length;
        let zeta = beam.damping_ratio;
        Self {
            axial,
            shear: 12.0 * ei / length.powi(3),
            coupling: 6.0 * ei / (length * length),
            bend: 2.0 * ei / length,
            torsion,
            linear_damping: 2.0 * zeta * (axial * reduced_mass).sqrt(),
            angular_damping: 2.0 * zeta * (ei / length * reduced_inertia).sqrt(),
        }
    }
}

/// Forces and torques a beam applies to its endpoints, in world coordinates.
#[derive(Clone, Copy, Debug, Default)]
pub struct BeamLoad {
    pub force_a: Vec3,
    pub torque_a: Vec3,
    pub force_b: Vec3,
    pub torque_b: Vec3,
}

/// Deformation of a beam measured in its corotated frame.
#[derive(Clone, Copy, Debug)]
struct BeamStrain {
    /// Mid frame as a rotation matrix.
    mid: Matrix3<f64>,
    /// Chord from a to b, beam-local (x along the beam axis).
    chord: Vec3,
    /// Rotation of endpoint b relative to the mid frame, beam-local.
    /// Endpoint a carries the negation.
    twist_b: Vec3,
}

fn to_beam_frame(axis: Axis, v: Vec3) -> Vec3 {
    match axis {
        Axis::X => v,
        Axis::Y => Vec3::new(v.y, v.z, v.x),
        Axis::Z => Vec3::new(v.z, v.x, v.y),
    }
}

fn from_beam_frame(axis: Axis, v: Vec3) -> Vec3 {
    match axis {
        Axis::X => v,
        Axis::Y => Vec3::new(v.z, v.x, v.y),
        Axis::Z => Vec3::new(v.y, v.z, v.x),
    }
}

fn beam_strain(axis: Axis, a: &Voxel, b: &Voxel) -> BeamStrain {
    let mut rel = a.orientation.quaternion().conjugate() * b.orientation.quaternion();
    if rel.w < 0.0 {
        rel = -rel;
    }
    // Square root of the relative rotation; exact for unit quaternions with w >= 0.
    let half = Quaternion::new(rel.w + 1.0, rel.i, rel.j, rel.k).normalize();
    let mid = (a.orientation * UnitQuaternion::new_unchecked(half)).to_rotation_matrix();
    let chord = mid.matrix().tr_mul(&(b.position - a.position));
    // Small-angle rotation vector of the half rotation (2 * vector part).
    let twist = Vec3::new(half.i, half.j, half.k) * 2.0;
    BeamStrain {
        mid: mid.into_inner(),
        chord: to_beam_frame(axis, chord),
        twist_b: to_beam_frame(axis, twist),
    }
}

fn elastic_energy(c: &BeamCoefficients, length: f64, s: &BeamStrain) -> f64 {
    let u = s.chord.x - length;
    let (dy, dz) = (s.chord.y, s.chord.z);
    let t = s.twist_b;
    0.5 * c.axial * u * u
        + 0.5 * c.shear * (dy * dy + dz * dz)
        + c.bend * (t.z * t.z + t.y * t.y)
        + 2.0 * c.torsion * t.x * t.x
}

fn elastic_load(beam: &Beam, c: &BeamCoefficients, a: &Voxel, b: &Voxel) -> BeamLoad {
    let s = beam_strain(beam.axis, a, b);
    let length = beam.rest_length();
    let u = s.chord.x - length;
    let (dy, dz) = (s.chord.y, s.chord.z);
    let t = s.twist_b;

    let force_b_local = Vec3::new(-c.axial * u, -c.shear * dy, -c.shear * dz);
    // Bending in the local xy plane (rotation about z) and xz plane (about y).
    let moment_a_local = Vec3::new(
        2.0 * c.torsion * t.x,
        -(c.coupling * dz - c.bend * t.y),
        c.coupling * dy + c.bend * t.z,
    );
    let moment_b_local = Vec3::new(
        -2.0 * c.torsion * t.x,
        -(c.coupling * dz + c.bend * t.y),
        c.coupling * dy - c.bend * t.z,
    );

    let force_b = s.mid * from_beam_frame(beam.axis, force_b_local);
    BeamLoad {
        force_a: -force_b,
        torque_a: s.mid * from_beam_frame(beam.axis, moment_a_local),
        force_b,
        torque_b: s.mid * from_beam_frame(beam.axis, moment_b_local),
    }
}

/// Deformation rate of a beam: relative endpoint velocity minus the part
/// explained by the mean spin. Rigid motion has zero rate.
fn stretch_rate(a: &Voxel, b: &Voxel) -> (Vec3, Vec3) {
    let r = b.position - a.position;
    let mean_spin = (a.angular_velocity + b.angular_velocity) * 0.5;
    (r, (b.velocity - a.velocity) - mean_spin.cross(&r))
}

/// Instantaneous elastic plus damping load.
fn beam_load(beam: &Beam, c: &BeamCoefficients, a: &Voxel, b: &Voxel) -> BeamLoad {
    let mut load = elastic_load(beam, c, a, b);
    let (r, w) = stretch_rate(a, b);
    let damp_force_b = -w * c.linear_damping;
    let damp_torque = r.cross(&w) * (0.5 * c.linear_damping);
    let spin_damping = (b.angular_velocity - a.angular_velocity) * c.angular_damping;
    load.force_a -= damp_force_b;
    load.force_b += damp_force_b;
    load.torque_a += damp_torque + spin_damping;
    load.torque_b += damp_torque - spin_damping;
    load
}

/// Step-invariant damping data for one beam at a given timestep.
#[derive(Clone, Copy, Debug)]
struct PairDamping {
    /// `expm1(-c k dt) / k` along the chord, where `k` is the pair mobility.
    along: f64,
    /// The same factor for the relative spin.
    spin: f64,
    /// `-c dt` for the linear damping coefficient `c`.
    rate: f64,
    inv_mass_a: f64,
    inv_mass_b: f64,
    inv_inertia_a: f64,
    inv_inertia_b: f64,
    /// Rotational contribution to the mobility across the chord, per m^2.
    beta: f64,
}

impl PairDamping {
    fn new(c: &BeamCoefficients, dt: f64, a: &Voxel, b: &Voxel) -> Self {
        let (inv_mass_a, inv_mass_b) = (1.0 / a.mass, 1.0 / b.mass);
        let (inv_inertia_a, inv_inertia_b) = (1.0 / a.inertia, 1.0 / b.inertia);
        let k_par = inv_mass_a + inv_mass_b;
        let k_rot = inv_inertia_a + inv_inertia_b;
        Self {
            along: (-c.linear_damping * k_par * dt).exp_m1() / k_par,
            spin: (-c.angular_damping * k_rot * dt).exp_m1() / k_rot,
            rate: -c.linear_damping * dt,
            inv_mass_a,
            inv_mass_b,
            inv_inertia_a,
            inv_inertia_b,
            beta: 0.25 * k_rot,
        }
    }
}

/// Integrates one beam's damping over a step in closed form, treating the two
/// endpoints as an isolated pair. The relative motion decays exponentially,
/// so the update never overshoots however stiff the damping; equal and
/// opposite impulses keep momentum exact.
fn damp_pair(d: &PairDamping, a: &mut Voxel, b: &mut Voxel) {
    let (r, w) = stretch_rate(a, b);
    let r2 = r.norm_squared();
    let w_par = r * (w.dot(&r) / r2);
    let w_perp = w - w_par;
    // Mobility of the stretch rate across the chord includes the rotational
    // contribution.
    let k_perp = d.inv_mass_a + d.inv_mass_b + d.beta * r2;
    let across = (d.rate * k_perp).exp_m1() / k_perp;
    let p = w_par * d.along + w_perp * across;
    let spin_impulse = p.cross(&r) * 0.5;
    a.velocity -= p * d.inv_mass_a;
    b.velocity += p * d.inv_mass_b;
    a.angular_velocity += spin_impulse * d.inv_inertia_a;
    b.angular_velocity += spin_impulse * d.inv_inertia_b;

    let q = (b.angular_velocity - a.angular_velocity) * d.spin;
    a.angular_velocity -= q * d.inv_inertia_a;
    b.angular_velocity += q * d.inv_inertia_b;
}

/// Breakdown of the lattice energy (J).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub kinetic: f64,
    pub elastic: f64,
    pub gravitational: f64,
    /// Energy stored in compressed floor penalty springs.
    pub contact: f64,
}

impl EnergyBreakdown {
    pub fn total(&self) -> f64 {
        self.kinetic + self.elastic + self.gravitational + self.contact
    }
}

#[derive(Clone, Debug)]
pub struct Lattice {
    voxels: Vec<Voxel>,
    beams: Vec<Beam>,
    coefficients: Vec<BeamCoefficients>,
    /// Beam indices incident to each voxel.
    adjacency: Vec<Vec<usize>>,
    index: HashMap<[i32; 3], VoxelId>,
    material: MaterialParams,
    /// External force applied to each voxel on every step until changed.
    external_force: Vec<Vec3>,
    force: Vec<Vec3>,
    torque: Vec<Vec3>,
    /// Per-beam damping data, valid for the timestep `damping_dt`.
    damping: Vec<PairDamping>,
    damping_dt: f64,
    /// Beam order for the damping sweep: grouped by axis and by the parity of
    /// the negative endpoint's grid index along it. Beams in one group share
    /// no voxel, so the sweep does not depend on the order within a group.
    damping_order: Vec<usize>,
    normal: Vec<f64>,
    steps: u64,
    floor_enabled: bool,
}

/// Builds the lattice for an occupancy grid: one voxel per occupied cell at
/// `grid_index * l`, one beam per 6-adjacent occupied pair.
pub fn build_lattice(grid: &Occupancy, material: &MaterialParams) -> Result<Lattice, LatticeError> {
    material.validate()?;
    let cells: Vec<[i32; 3]> = grid.occupied().collect();
    if cells.is_empty() {
        return Err(LatticeError::EmptyGrid);
    }
    let l = material.beam_length;
    let mass = material.voxel_mass();
    let inertia = mass * l * l / 6.0;

    let mut index = HashMap::with_capacity(cells.len());
    let voxels: Vec<Voxel> = cells
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            index.insert(g, VoxelId(i));
            Voxel {
                grid_index: g,
                position: Vec3::new(g[0] as f64, g[1] as f64, g[2] as f64) * l,
                velocity: Vec3::zeros(),
                orientation: Rotation::identity(),
                angular_velocity: Vec3::zeros(),
                mass,
                inertia,
                friction: material.friction_high,
                in_contact: false,
            }
        })
        .collect();

    let mut beams = Vec::new();
    let mut adjacency = vec![Vec::new(); voxels.len()];
    for (ia, g) in cells.iter().enumerate() {
        for axis in Axis::ALL {
            let u = axis.unit();
            let nb = [g[0] + u[0], g[1] + u[1], g[2] + u[2]];
            if let Some(&VoxelId(ib)) = index.get(&nb) {
                adjacency[ia].push(beams.len());
                adjacency[ib].push(beams.len());
                beams.push(Beam {
                    endpoint_a: VoxelId(ia),
                    endpoint_b: VoxelId(ib),
                    axis,
                    rest_dims: Vec3::repeat(l),
                    elastic_modulus: material.modulus,
                    damping_ratio: material.damping_ratio,
                    cross_section_side: l,
                });
            }
        }
    }

    let components = count_components(voxels.len(), &beams);
    if components > 1 {
        return Err(LatticeError::Disconnected { components });
    }

    let mut damping_order: Vec<usize> = (0..beams.len()).collect();
    damping_order.sort_by_key(|&bi| {
        let b = &beams[bi];
        let k = b.axis.index();
        (k, voxels[b.endpoint_a.0].grid_index[k].rem_euclid(2))
    });

    let n = voxels.len();
    let mut lattice = Lattice {
        voxels,
        beams,
        coefficients: Vec::new(),
        adjacency,
        index,
        material: material.clone(),
        external_force: vec![Vec3::zeros(); n],
        force: vec![Vec3::zeros(); n],
        torque: vec![Vec3::zeros(); n],
        damping: Vec::new(),
        damping_dt: f64::NAN,
        damping_order,
        normal: vec![0.0; n],
        steps: 0,
        floor_enabled: true,
    };
    lattice.refresh_coefficients();
    Ok(lattice)
}

fn count_components(n: usize, beams: &[Beam]) -> usize {
    let mut neighbours = vec![Vec::new(); n];
    for b in beams {
        neighbours[b.endpoint_a.0].push(b.endpoint_b.0);
        neighbours[b.endpoint_b.0].push(b.endpoint_a.0);
    }
    let mut seen = vec![false; n];
    let mut components = 0;
    for start in 0..n {
        if seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            for &w in &neighbours[v] {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
    }
    components
}

impl Lattice {
    pub fn voxels(&self) -> &[Voxel] {
        &self.voxels
    }

    pub fn voxel(&self, id: VoxelId) -> Option<&Voxel> {
        self.voxels.get(id.0)
    }

    pub fn beams(&self) -> &[Beam] {
        &self.beams
    }

    pub fn material(&self) -> &MaterialParams {
        &self.material
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn voxel_at(&self, grid_index: [i32; 3]) -> Option<VoxelId> {
        self.index.get(&grid_index).copied()
    }

    /// Beam indices incident to a voxel.
    pub fn incident_beams(&self, id: VoxelId) -> &[usize] {
        &self.adjacency[id.0]
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps
    }

    /// Enables or disables the floor plane (on by default).
    pub fn set_floor(&mut self, enabled: bool) {
        self.floor_enabled = enabled;
    }

    /// Mutable access to voxel kinematic state, for posing and test setup.
    pub fn voxels_mut(&mut self) -> &mut [Voxel] {
        &mut self.voxels
    }

    /// Persistent external forces, one per voxel.
    pub fn external_forces_mut(&mut self) -> &mut [Vec3] {
        &mut self.external_force
    }

    /// Read access to the voxels alongside the external forces.
    pub fn voxels_and_external_forces_mut(&mut self) -> (&[Voxel], &mut [Vec3]) {
        (&self.voxels, &mut self.external_force)
    }

    pub fn clear_external_forces(&mut self) {
        self.external_force.iter_mut().for_each(|f| *f = Vec3::zeros());
    }

    fn refresh_coefficients(&mut self) {
        self.coefficients = self
            .beams
            .iter()
            .map(|b| self.coefficients_for(b))
            .collect();
    }

    fn damping_for(&self, bi: usize, dt: f64) -> PairDamping {
        let beam = &self.beams[bi];
        PairDamping::new(
            &self.coefficients[bi],
            dt,
            &self.voxels[beam.endpoint_a.0],
            &self.voxels[beam.endpoint_b.0],
        )
    }

    fn coefficients_for(&self, beam: &Beam) -> BeamCoefficients {
        let a = &self.voxels[beam.endpoint_a.0];
        let b = &self.voxels[beam.endpoint_b.0];
        let reduced_mass = a.mass * b.mass / (a.mass + b.mass);
        let reduced_inertia = a.inertia * b.inertia / (a.inertia + b.inertia);
        BeamCoefficients::new(beam, reduced_mass, reduced_inertia)
    }

    fn check_ids(&self, ids: &[VoxelId]) -> Result<(), LatticeError> {
        if ids.is_empty() {
            return Err(LatticeError::EmptyVoxelSet);
        }
        match ids.iter().find(|id| id.0 >= self.voxels.len()) {
            Some(bad) => Err(LatticeError::UnknownVoxel(bad.0)),
            None => Ok(()),
        }
    }

    /// Sets the friction coefficient of exactly the named voxels.
    pub fn set_voxel_friction(&mut self, ids: &[VoxelId], mu: f64) -> Result<(), LatticeError> {
        self.check_ids(ids)?;
        let (low, high) = (self.material.friction_low, self.material.friction_high);
        if !(mu >= low && mu <= high) {
            return Err(LatticeError::FrictionOutOfRange { mu, low, high });
        }
        for id in ids {
            self.voxels[id.0].friction = mu;
        }
        Ok(())
    }

    /// Adds per-axis deltas to the rest dimensions of every beam incident to
    /// the voxel set (each beam once), clamped to the material's rest range.
    pub fn set_beam_rest_dims(&mut self, ids: &[VoxelId], deltas: Vec3) -> Result<(), LatticeError> {
        self.check_ids(ids)?;
        if deltas == Vec3::zeros() {
            return Ok(());
        }
        let mut touched: Vec<usize> = ids
            .iter()
            .flat_map(|id| self.adjacency[id.0].iter().copied())
            .collect();
        touched.sort_unstable();
        touched.dedup();
        self.adjust_rest_dims(&touched, deltas);
        Ok(())
    }

    /// Applies rest-dimension deltas to an explicit, deduplicated beam list.
    pub(crate) fn adjust_rest_dims(&mut self, beams: &[usize], deltas: Vec3) {
        let (lo, hi) = (self.material.min_dim(), self.material.max_dim());
        for &bi in beams {
            let dims = self.beams[bi].rest_dims + deltas;
            self.beams[bi].rest_dims = dims.map(|d| d.clamp(lo, hi));
            self.coefficients[bi] = self.coefficients_for(&self.beams[bi]);
            if self.damping_dt.is_finite() {
                self.damping[bi] = self.damping_for(bi, self.damping_dt);
            }
        }
    }

    /// Force and torque each beam currently exerts on its endpoints.
    pub fn beam_loads(&self) -> Vec<BeamLoad> {
        self.beams
            .iter()
            .zip(&self.coefficients)
            .map(|(beam, c)| {
                beam_load(
                    beam,
                    c,
                    &self.voxels[beam.endpoint_a.0],
                    &self.voxels[beam.endpoint_b.0],
                )
            })
            .collect()
    }

    /// Sum of all internal beam forces (ideally the zero vector).
    pub fn net_internal_force(&self) -> Vec3 {
        self.beam_loads()
            .iter()
            .fold(Vec3::zeros(), |acc, l| acc + l.force_a + l.force_b)
    }

    fn contact_radius(&self) -> f64 {
        0.5 * self.material.beam_length
    }

    /// Floor penetration depth of a voxel (m, positive when in contact).
    pub fn penetration(&self, id: VoxelId) -> f64 {
        self.contact_radius() - self.voxels[id.0].position.z
    }

    pub fn energy(&self, gravity: Vec3, contact: &ContactModel) -> EnergyBreakdown {
        let mut e = EnergyBreakdown::default();
        let radius = self.contact_radius();
        for v in &self.voxels {
            e.kinetic += 0.5 * v.mass * v.velocity.norm_squared()
                + 0.5 * v.inertia * v.angular_velocity.norm_squared();
            e.gravitational -= v.mass * gravity.dot(&v.position);
            let depth = radius - v.position.z;
            if self.floor_enabled && depth > 0.0 {
                e.contact += 0.5 * contact.penalty_stiffness * depth * depth;
            }
        }
        for (beam, c) in self.beams.iter().zip(&self.coefficients) {
            let s = beam_strain(
                beam.axis,
                &self.voxels[beam.endpoint_a.0],
                &self.voxels[beam.endpoint_b.0],
            );
            e.elastic += elastic_energy(c, beam.rest_length(), &s);
        }
        e
    }

    /// Kinetic + elastic + gravitational (+ floor penalty) energy (J).
    pub fn total_energy(&self, gravity: Vec3, contact: &ContactModel) -> f64 {
        self.energy(gravity, contact).total()
    }

    /// Mass-weighted mean position.
    pub fn center_of_mass(&self) -> Vec3 {
        let (sum, mass) = self
            .voxels
            .iter()
            .fold((Vec3::zeros(), 0.0), |(s, m), v| (s + v.position * v.mass, m + v.mass));
        sum / mass
    }

    pub fn total_mass(&self) -> f64 {
        self.voxels.iter().map(|v| v.mass).sum()
    }

    /// Advances the lattice by one step. Beam damping is first integrated per
    /// beam in closed form; elastic, gravity and external forces then give a
    /// symplectic Euler velocity kick; the floor's normal response is solved
    /// implicitly per voxel, friction is applied against the resulting
    /// tangential velocity, and positions drift with the final velocities.
    pub fn integrate_step(
        &mut self,
        dt: f64,
        gravity: Vec3,
        contact: &ContactModel,
    ) -> Result<(), LatticeError> {
        let limit = self.material.max_timestep();
        if !(dt > 0.0 && dt <= limit) {
            return Err(LatticeError::TimestepTooLarge { dt, limit });
        }
        self.accumulate_forces(gravity);
        self.damp(dt);
        self.kick(dt);
        self.resolve_normal_contact(dt, contact);
        self.apply_friction(dt);
        self.drift(dt);
        self.steps += 1;
        if self.voxels.iter().all(Voxel::is_finite) {
            Ok(())
        } else {
            Err(LatticeError::Diverged { step: self.steps })
        }
    }

    fn accumulate_forces(&mut self, gravity: Vec3) {
        for (i, v) in self.voxels.iter().enumerate() {
            self.force[i] = gravity * v.mass + self.external_force[i];
            self.torque[i] = Vec3::zeros();
        }
        for (beam, c) in self.beams.iter().zip(&self.coefficients) {
            let (ia, ib) = (beam.endpoint_a.0, beam.endpoint_b.0);
            let load = elastic_load(beam, c, &self.voxels[ia], &self.voxels[ib]);
            self.force[ia] += load.force_a;
            self.torque[ia] += load.torque_a;
            self.force[ib] += load.force_b;
            self.torque[ib] += load.torque_b;
        }
    }

    /// Penalty spring-damper normal response, integrated implicitly: the
    /// force uses the end-of-step depth and velocity, so a voxel entering the
    /// floor mid-step is pushed back on that step. Records the magnitudes.
    fn resolve_normal_contact(&mut self, dt: f64, contact: &ContactModel) {
        let radius = self.contact_radius();
        let k = contact.penalty_stiffness;
        for (i, v) in self.voxels.iter_mut().enumerate() {
            self.normal[i] = 0.0;
            v.in_contact = false;
            if !self.floor_enabled {
                continue;
            }
            let depth = radius - v.position.z;
            let vz = v.velocity.z;
            let c = 2.0 * contact.damping_ratio * (k * v.mass).sqrt();
            let n = (k * (depth - vz * dt) - c * vz) / (1.0 + (k * dt + c) * dt / v.mass);
            if n > 0.0 {
                v.in_contact = true;
                self.normal[i] = n;
                v.velocity.z += n * dt / v.mass;
            }
        }
    }

    fn kick(&mut self, dt: f64) {
        for (i, v) in self.voxels.iter_mut().enumerate() {
            v.velocity += self.force[i] * (dt / v.mass);
            v.angular_velocity += self.torque[i] * (dt / v.inertia);
        }
    }

    fn damp(&mut self, dt: f64) {
        if self.damping_dt != dt {
            self.damping = (0..self.beams.len()).map(|bi| self.damping_for(bi, dt)).collect();
            self.damping_dt = dt;
        }
        for &bi in &self.damping_order {
            let (beam, d) = (&self.beams[bi], &self.damping[bi]);
            let (ia, ib) = (beam.endpoint_a.0, beam.endpoint_b.0);
            // Endpoint indices always satisfy ia < ib.
            let (lo, hi) = self.voxels.split_at_mut(ib);
            damp_pair(d, &mut lo[ia], &mut hi[0]);
        }
    }

    /// Coulomb friction against the tangential velocity left after damping,
    /// the kick and the normal response. The force that would bring a voxel
    /// to rest is applied when it is within `mu N` (sticking); otherwise `mu N`
    /// opposes the sliding velocity, so friction never reverses it.
    fn apply_friction(&mut self, dt: f64) {
        for (v, &n) in self.voxels.iter_mut().zip(&self.normal) {
            if !v.in_contact {
                continue;
            }
            let tangential = Vec3::new(v.velocity.x, v.velocity.y, 0.0);
            let arrest = -tangential * (v.mass / dt);
            v.velocity += clamp_norm(arrest, v.friction * n) * (dt / v.mass);
        }
    }

    fn drift(&mut self, dt: f64) {
        for v in self.voxels.iter_mut() {
            v.position += v.velocity * dt;
            let spin = Rotation::from_scaled_axis(v.angular_velocity * dt);
            v.orientation = Rotation::new_normalize((spin * v.orientation).into_inner());
        }
    }
}

fn clamp_norm(v: Vec3, limit: f64) -> Vec3 {
    let n = v.norm();
    if n > limit && n > 0.0 {
        v * (limit / n)
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const G: f64 = 9.80665;

    fn down() -> Vec3 {
        Vec3::new(0.0, 0.0, -G)
    }

    /// Brute-force count of 6-neighbour pairs in a fully occupied box.
    fn neighbour_pairs(nx: i32, ny: i32, nz: i32) -> usize {
        let cells: Vec<[i32; 3]> = (0..nx)
            .flat_map(|x| (0..ny).flat_map(move |y| (0..nz).map(move |z| [x, y, z])))
            .collect();
        let mut n = 0;
        for (i, a) in cells.iter().enumerate() {
            for b in &cells[i + 1..] {
                let d: i32 = (0..3).map(|k| (a[k] - b[k]).abs()).sum();
                if d == 1 {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn smallest_lattice() {
        let lat = build_lattice(&Occupancy::filled(2, 1, 1), &MaterialParams::default()).unwrap();
        assert_eq!(lat.len(), 2);
        assert_eq!(lat.beams().len(), 1);
    }

    #[test]
    fn beam_count_matches_enumeration() {
        for (nx, ny, nz) in [(2, 2, 2), (3, 2, 1), (4, 3, 2), (5, 1, 3)] {
            let lat = build_lattice(
                &Occupancy::filled(nx, ny, nz),
                &MaterialParams::default(),
            )
            .unwrap();
            assert_eq!(lat.len(), nx * ny * nz);
            assert_eq!(
                lat.beams().len(),
                neighbour_pairs(nx as i32, ny as i32, nz as i32)
            );
        }
        let cube = build_lattice(&Occupancy::filled(2, 2, 2), &MaterialParams::default()).unwrap();
        assert_eq!(cube.beams().len(), 12);
    }

    #[test]
    fn default_voxel_mass() {
        let lat = build_lattice(&Occupancy::filled(1, 1, 1), &MaterialParams::default()).unwrap();
        assert!((lat.voxels()[0].mass - 3.0e-3).abs() < 1e-15);
    }

    #[test]
    fn empty_and_disconnected_grids_rejected() {
        let m = MaterialParams::default();
        assert_eq!(
            build_lattice(&Occupancy::empty(3, 3, 3), &m).unwrap_err(),
            LatticeError::EmptyGrid
        );
        let mut g = Occupancy::empty(3, 1, 1);
        g.set([0, 0, 0], true);
        g.set([2, 0, 0], true);
        assert_eq!(
            build_lattice(&g, &m).unwrap_err(),
            LatticeError::Disconnected { components: 2 }
        );
    }

    #[test]
    fn free_fall_matches_constant_acceleration() {
        let mut lat = build_lattice(&Occupancy::filled(1, 1, 1), &MaterialParams::default()).unwrap();
        lat.set_floor(false);
        let dt = 1.06e-4;
        let contact = ContactModel::default();
        let n = 5000;
        for _ in 0..n {
            lat.integrate_step(dt, down(), &contact).unwrap();
        }
        let expected = -G * n as f64 * dt;
        let vz = lat.voxels()[0].velocity.z;
        assert!(((vz - expected) / expected).abs() < 1e-12, "{vz} vs {expected}");
    }

    #[test]
    fn oversized_timestep_rejected() {
        let mut lat = build_lattice(&Occupancy::filled(2, 1, 1), &MaterialParams::default()).unwrap();
        let limit = MaterialParams::default().max_timestep();
        let err = lat
            .integrate_step(limit * 1.01, down(), &ContactModel::default())
            .unwrap_err();
        assert!(matches!(err, LatticeError::TimestepTooLarge { .. }));
    }

    #[test]
    fn resting_penetration_balances_weight() {
        let mut lat = build_lattice(&Occupancy::filled(1, 1, 1), &MaterialParams::default()).unwrap();
        let contact = ContactModel::default();
        lat.voxels_mut()[0].position.z = 0.005;
        for _ in 0..20_000 {
            lat.integrate_step(1.06e-4, down(), &contact).unwrap();
        }
        let m = lat.voxels()[0].mass;
        let expected = m * G / contact.penalty_stiffness;
        let depth = lat.penetration(VoxelId(0));
        assert!(((depth - expected) / expected).abs() < 0.05, "{depth} vs {expected}");
        assert!(lat.voxels()[0].in_contact);
    }

    #[test]
    fn friction_setters() {
        let mut lat = build_lattice(&Occupancy::filled(3, 1, 1), &MaterialParams::default()).unwrap();
        lat.set_voxel_friction(&[VoxelId(1)], 1e-4).unwrap();
        assert_eq!(lat.voxels()[1].friction, 1e-4);
        assert_eq!(lat.voxels()[0].friction, 2.0);
        lat.set_voxel_friction(&[VoxelId(1)], 2.0).unwrap();
        assert_eq!(lat.voxels()[1].friction, 2.0);
        assert_eq!(
            lat.set_voxel_friction(&[], 2.0).unwrap_err(),
            LatticeError::EmptyVoxelSet
        );
        assert_eq!(
            lat.set_voxel_friction(&[VoxelId(9)], 2.0).unwrap_err(),
            LatticeError::UnknownVoxel(9)
        );
        assert!(matches!(
            lat.set_voxel_friction(&[VoxelId(0)], 2.5),
            Err(LatticeError::FrictionOutOfRange { .. })
        ));
    }

    #[test]
    fn rest_dim_deltas_and_clamp() {
        let m = MaterialParams::default();
        let mut lat = build_lattice(&Occupancy::filled(1, 1, 2), &m).unwrap();
        let ids = [VoxelId(1)];
        lat.set_beam_rest_dims(&ids, Vec3::new(0.0, 0.0, 3e-4)).unwrap();
        assert!((lat.beams()[0].rest_dims.z - (m.beam_length + 3e-4)).abs() < 1e-15);

        let before = lat.beams()[0].clone();
        lat.set_beam_rest_dims(&ids, Vec3::zeros()).unwrap();
        assert_eq!(lat.beams()[0], before);

        // Scalar clamp oracle.
        let mut scalar = m.beam_length + 3e-4;
        for _ in 0..100 {
            lat.set_beam_rest_dims(&ids, Vec3::new(0.0, 0.0, 3e-4)).unwrap();
            scalar = (scalar + 3e-4).min(m.max_dim());
        }
        assert_eq!(lat.beams()[0].rest_dims.z, m.max_dim());
        assert!((scalar - m.max_dim()).abs() < 1e-15);

        assert_eq!(
            lat.set_beam_rest_dims(&[VoxelId(7)], Vec3::zeros()).unwrap_err(),
            LatticeError::UnknownVoxel(7)
        );
    }

    #[test]
    fn energy_of_simple_states() {
        let m = MaterialParams::default();
        let contact = ContactModel::default();
        let mut lat = build_lattice(&Occupancy::filled(1, 1, 1), &m).unwrap();
        let h = 0.3;
        lat.voxels_mut()[0].position.z = h;
        let e = lat.total_energy(down(), &contact);
        assert!((e - m.voxel_mass() * G * h).abs() < 1e-15);

        let mut pair = build_lattice(&Occupancy::filled(2, 1, 1), &m).unwrap();
        for v in pair.voxels_mut() {
            v.position.z = 0.5 * m.beam_length;
        }
        let e = pair.energy(down(), &contact);
        assert_eq!(e.kinetic + e.elastic, 0.0);

        let x = 0.1 * m.beam_length;
        pair.voxels_mut()[1].position.x += x;
        let hooke = 0.5 * m.axial_stiffness() * x * x;
        let e = pair.energy(Vec3::zeros(), &contact);
        assert!((e.elastic - hooke).abs() < 1e-9);
    }

    #[test]
    fn rigid_rotation_is_strain_free() {
        let m = MaterialParams::default();
        let mut lat = build_lattice(&Occupancy::filled(2, 2, 1), &m).unwrap();
        lat.set_floor(false);
        let rot = Rotation::from_euler_angles(0.3, -0.7, 1.1);
        for v in lat.voxels_mut() {
            v.position = rot * v.position + Vec3::new(0.1, -0.2, 0.5);
            v.orientation = rot;
        }
        let e = lat.energy(Vec3::zeros(), &ContactModel::default());
        assert!(e.elastic < 1e-20, "{}", e.elastic);
        for load in lat.beam_loads() {
            assert!(load.force_a.norm() < 1e-9 && load.torque_b.norm() < 1e-9);
        }
    }

    #[test]
    fn beam_forces_are_energy_gradient() {
        // Finite-difference check of the elastic forces at a small deformation.
        let m = MaterialParams::default();
        let mut lat = build_lattice(&Occupancy::filled(2, 1, 1), &m).unwrap();
        lat.set_floor(false);
        {
            let v = lat.voxels_mut();
            v[1].position += Vec3::new(2e-4, -3e-4, 1e-4);
            v[1].orientation = Rotation::from_scaled_axis(Vec3::new(0.01, 0.02, -0.015));
            v[0].orientation = Rotation::from_scaled_axis(Vec3::new(-0.005, 0.01, 0.02));
        }
        let load = lat.beam_loads()[0];
        let energy = |l: &Lattice| l.energy(Vec3::zeros(), &ContactModel::default()).elastic;
        let h = 1e-8;
        for k in 0..3 {
            let mut plus = lat.clone();
            plus.voxels_mut()[1].position[k] += h;
            let mut minus = lat.clone();
            minus.voxels_mut()[1].position[k] -= h;
            let grad = (energy(&plus) - energy(&minus)) / (2.0 * h);
            let scale = load.force_b.norm().max(1e-3);
            assert!(
                (-grad - load.force_b[k]).abs() < 2e-2 * scale,
                "axis {k}: {} vs {}",
                -grad,
                load.force_b[k]
            );
        }
    }
}
