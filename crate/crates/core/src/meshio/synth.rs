//! Synthetic tube-with-bulge cases with an analytic velocity field.
//!
//! The tube runs along `+y` from the inlet plane `y = 0`. Its cross-section
//! is a ring-structured disk in the `x-z` plane, extruded in layers and split
//! into tets; the bulge is a smooth radial bump on the `+x` side. The flow is
//! Poiseuille in the tube plus a recirculating vortex centred in the bulge,
//! both proportional to the instantaneous inflow rate.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{InletGeometry, Mesh, NodeType, Trajectory, Waveform, DEFAULT_DT};
use crate::error::{Error, Result};
use crate::geom::{self, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometrySpec {
    pub tube_radius: f64,
    pub tube_length: f64,
    /// Footprint radius of the bulge on the tube wall; 0 disables the bulge.
    pub bulge_radius: f64,
    /// Distance from the tube axis to the bulge sphere centre.
    pub bulge_offset: f64,
    pub target_edge_length: f64,
    pub max_nodes: usize,
}

impl Default for GeometrySpec {
    fn default() -> Self {
        GeometrySpec {
            tube_radius: 2.0,
            tube_length: 10.0,
            bulge_radius: 2.5,
            bulge_offset: 2.0,
            target_edge_length: 0.34,
            max_nodes: 200_000,
        }
    }
}

impl GeometrySpec {
    /// Radial protrusion of the bulge beyond the tube wall.
    pub fn bulge_height(&self) -> f64 {
        self.bulge_offset + self.bulge_radius - self.tube_radius
    }

    pub fn has_bulge(&self) -> bool {
        self.bulge_radius > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.tube_radius,
            self.tube_length,
            self.bulge_radius,
            self.bulge_offset,
            self.target_edge_length,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Geometry("geometry parameters must be finite".into()));
        }
        if !(self.target_edge_length > 0.0) {
            return Err(Error::Geometry("target_edge_length must be positive".into()));
        }
        if !(self.tube_radius > 0.0) || !(self.tube_length > 0.0) {
            return Err(Error::Geometry("tube radius and length must be positive".into()));
        }
        if self.bulge_radius < 0.0 {
            return Err(Error::Geometry("bulge_radius must be non-negative".into()));
        }
        if self.has_bulge() {
            if self.bulge_radius >= self.tube_length / 2.0 {
                return Err(Error::Geometry(format!(
                    "bulge_radius {} must be below half the tube length {}",
                    self.bulge_radius,
                    self.tube_length / 2.0
                )));
            }
            if self.bulge_height() <= 0.0 {
                return Err(Error::Geometry(format!(
                    "bulge swallowed by tube: offset {} + radius {} does not exceed tube radius {}",
                    self.bulge_offset, self.bulge_radius, self.tube_radius
                )));
            }
            if self.bulge_radius >= PI * self.tube_radius {
                return Err(Error::Geometry(
                    "bulge footprint wraps around the whole tube circumference".into(),
                ));
            }
        }
        Ok(())
    }

    fn rings(&self) -> usize {
        ((self.tube_radius / self.target_edge_length).ceil() as usize).max(2)
    }

    fn layers(&self) -> usize {
        ((self.tube_length / self.target_edge_length).ceil() as usize).max(2)
    }

    /// Node count the mesher will produce.
    pub fn node_count(&self) -> usize {
        let nr = self.rings();
        (1 + 3 * nr * (nr + 1)) * (self.layers() + 1)
    }

    /// Wall radius along the ray at angle `theta` (from `+x` towards `+z`) at height `y`.
    pub fn wall_radius(&self, theta: f64, y: f64) -> f64 {
        let r = self.tube_radius;
        if !self.has_bulge() {
            return r;
        }
        let wrapped = (theta + PI).rem_euclid(2.0 * PI) - PI;
        let dy = y - self.tube_length / 2.0;
        let dist = ((r * wrapped).powi(2) + dy * dy).sqrt();
        let s = dist / self.bulge_radius;
        if s >= 1.0 {
            r
        } else {
            r + self.bulge_height() * (1.0 - s * s).powi(2)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaveformParams {
    pub period: f64,
    /// Cycle-averaged flow rate, mm^3/s.
    pub mean_flow: f64,
    /// Systolic peak height relative to the diastolic baseline.
    pub pulsatility: f64,
    /// Phase of the systolic peak in `[0, 1)`.
    pub peak_phase: f64,
    pub samples: usize,
    /// Relative seeded perturbation of pulsatility and peak phase.
    pub jitter: f64,
}

impl Default for WaveformParams {
    fn default() -> Self {
        WaveformParams {
            period: 0.8,
            mean_flow: 2000.0,
            pulsatility: 1.5,
            peak_phase: 0.15,
            samples: 40,
            jitter: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecirculationParams {
    /// Vortex stream-function amplitude relative to the mean tube velocity.
    pub strength: f64,
    /// Gaussian width as a fraction of the bulge height.
    pub width_fraction: f64,
}

impl Default for RecirculationParams {
    fn default() -> Self {
        RecirculationParams {
            strength: 1.5,
            width_fraction: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowSpec {
    pub waveform: WaveformParams,
    pub recirculation: RecirculationParams,
    pub dt: f64,
    pub seed: u64,
}

impl Default for FlowSpec {
    fn default() -> Self {
        FlowSpec {
            waveform: WaveformParams::default(),
            recirculation: RecirculationParams::default(),
            dt: DEFAULT_DT,
            seed: 0,
        }
    }
}

/// Analytic velocity field of a synthetic case, linear in the flow rate.
#[derive(Debug, Clone)]
pub struct FlowField {
    pub tube_radius: f64,
    /// `(centre, width, strength)` of the bulge vortex.
    pub vortex: Option<(Vec3, f64, f64)>,
}

impl FlowField {
    pub fn new(geom: &GeometrySpec, recirc: &RecirculationParams) -> Self {
        let vortex = geom.has_bulge().then(|| {
            let h = geom.bulge_height();
            let center = [geom.tube_radius + 0.5 * h, geom.tube_length / 2.0, 0.0];
            (center, recirc.width_fraction * h, recirc.strength)
        });
        FlowField {
            tube_radius: geom.tube_radius,
            vortex,
        }
    }

    /// Unconstrained field at `p` for flow rate `q` (no wall or inlet enforcement).
    pub fn velocity_at(&self, p: Vec3, q: f64) -> Vec3 {
        let r2 = self.tube_radius * self.tube_radius;
        let mean = q / (PI * r2);
        let rho2 = p[0] * p[0] + p[2] * p[2];
        let mut u = [0.0, 2.0 * mean * (1.0 - rho2 / r2).max(0.0), 0.0];
        if let Some((c, w, k)) = self.vortex {
            let d = geom::sub(p, c);
            // Stream function psi(x, y, z); u = (d psi/dy, -d psi/dx, 0) is solenoidal.
            let psi = k * mean * w * (-geom::dot(d, d) / (2.0 * w * w)).exp();
            u[0] += -psi * d[1] / (w * w);
            u[1] += psi * d[0] / (w * w);
        }
        u
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCase {
    pub mesh: Mesh,
    pub waveform: Waveform,
    pub trajectory: Trajectory,
    /// Nodes outside the nominal tube radius.
    pub bulge_nodes: Vec<usize>,
    pub field: FlowField,
}

fn build_waveform(p: &WaveformParams, seed: u64) -> Result<Waveform> {
    if !(p.period > 0.0) || p.samples == 0 || !(p.mean_flow > 0.0) || p.pulsatility < 0.0 {
        return Err(Error::InvalidArgument(
            "waveform needs positive period, mean flow, sample count and non-negative pulsatility"
                .into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amp = p.pulsatility * (1.0 + p.jitter * rng.random_range(-1.0..=1.0));
    let peak = p.peak_phase + 0.1 * p.jitter * rng.random_range(-1.0..=1.0);
    let circ = |a: f64, b: f64| {
        let d = (a - b).rem_euclid(1.0);
        d.min(1.0 - d)
    };
    let shape: Vec<f64> = (0..p.samples)
        .map(|k| {
            let phase = k as f64 / p.samples as f64;
            let sys = (-0.5 * (circ(phase, peak) / 0.06).powi(2)).exp();
            let dicrotic = 0.35 * (-0.5 * (circ(phase, peak + 0.22) / 0.05).powi(2)).exp();
            1.0 + amp.max(0.0) * (sys + dicrotic)
        })
        .collect();
    let mean_shape = shape.iter().sum::<f64>() / shape.len() as f64;
    let samples = shape
        .iter()
        .enumerate()
        .map(|(k, s)| (p.period * k as f64 / p.samples as f64, p.mean_flow * s / mean_shape))
        .collect();
    Waveform::new(p.period, samples)
}

/// Ring-structured disk triangulation: node 0 at the centre, ring `k` holds
/// `6k` nodes. Returns local polar coordinates `(rho / R, theta)` and triangles.
fn disk(rings: usize) -> (Vec<(f64, f64)>, Vec<[usize; 3]>) {
    let mut nodes = vec![(0.0, 0.0)];
    let mut ring_start = vec![0usize];
    for k in 1..=rings {
        ring_start.push(nodes.len());
        let m = 6 * k;
        for j in 0..m {
            nodes.push((k as f64 / rings as f64, 2.0 * PI * j as f64 / m as f64));
        }
    }
    let mut tris = Vec::new();
    for k in 1..=rings {
        let outer: Vec<usize> = (0..6 * k).map(|j| ring_start[k] + j).collect();
        let inner: Vec<usize> = if k == 1 {
            vec![0]
        } else {
            (0..6 * (k - 1)).map(|j| ring_start[k - 1] + j).collect()
        };
        if inner.len() == 1 {
            for j in 0..outer.len() {
                tris.push([0, outer[j], outer[(j + 1) % outer.len()]]);
            }
            continue;
        }
        // Merge the two rings by angle into a strip.
        let (mi, mo) = (inner.len(), outer.len());
        let ang = |count: usize, idx: usize| 2.0 * PI * idx as f64 / count as f64;
        let (mut i, mut j) = (0usize, 0usize);
        while i < mi || j < mo {
            let advance_outer = if i == mi {
                true
            } else if j == mo {
                false
            } else {
                ang(mo, j + 1) <= ang(mi, i + 1)
            };
            if advance_outer {
                tris.push([inner[i % mi], outer[j % mo], outer[(j + 1) % mo]]);
                j += 1;
            } else {
                tris.push([inner[i % mi], outer[j % mo], inner[(i + 1) % mi]]);
                i += 1;
            }
        }
    }
    (nodes, tris)
}

/// Builds the tube(+bulge) mesh and its bulge node set.
pub fn build_mesh(spec: &GeometrySpec) -> Result<(Mesh, Vec<usize>)> {
    spec.validate()?;
    if spec.node_count() > spec.max_nodes {
        return Err(Error::Geometry(format!(
            "mesh would have {} nodes, above the configured limit {}",
            spec.node_count(),
            spec.max_nodes
        )));
    }
    let rings = spec.rings();
    let layers = spec.layers();
    let (cross, tris) = disk(rings);
    let n2 = cross.len();
    let r = spec.tube_radius;
    let mut positions = Vec::with_capacity(n2 * (layers + 1));
    let mut node_type = Vec::with_capacity(n2 * (layers + 1));
    let outer_start = n2 - 6 * rings;
    for l in 0..=layers {
        let y = spec.tube_length * l as f64 / layers as f64;
        for (local, &(rho, theta)) in cross.iter().enumerate() {
            let radius = rho * spec.wall_radius(theta, y);
            positions.push([radius * theta.cos(), y, radius * theta.sin()]);
            let kind = if local >= outer_start {
                NodeType::Wall
            } else if l == 0 {
                NodeType::Inlet
            } else if l == layers {
                NodeType::Outlet
            } else {
                NodeType::Interior
            };
            node_type.push(kind);
        }
    }
    let mut tets = Vec::with_capacity(tris.len() * layers * 3);
    for l in 0..layers {
        let lo = l * n2;
        let hi = (l + 1) * n2;
        for tri in &tris {
            let mut s = *tri;
            s.sort_unstable();
            let [a, b, c] = s;
            // Sorted-vertex prism split keeps shared quad faces conforming.
            tets.push([lo + a, lo + b, lo + c, hi + a]);
            tets.push([lo + b, lo + c, hi + a, hi + b]);
            tets.push([lo + c, hi + a, hi + b, hi + c]);
        }
    }
    let inlet_distance = positions.iter().map(|p| p[1]).collect();
    let mut mesh = Mesh {
        wall_normals: vec![[0.0; 3]; positions.len()],
        positions,
        tets,
        node_type,
        inlet_distance,
    };
    mesh.orient_tets();
    mesh.compute_wall_normals();
    mesh.validate()?;
    let bulge = (0..mesh.num_nodes())
        .filter(|&i| {
            let p = mesh.positions[i];
            (p[0] * p[0] + p[2] * p[2]).sqrt() > r * (1.0 + 1e-9)
        })
        .collect();
    Ok((mesh, bulge))
}

/// Ground-truth velocity on every node at flow rate `q`: analytic field in
/// the interior, exact parabolic profile on the inlet, zero on walls.
pub fn ground_truth_frame(
    mesh: &Mesh,
    field: &FlowField,
    inlet: &InletGeometry,
    q: f64,
) -> Vec<Vec3> {
    (0..mesh.num_nodes())
        .map(|i| match mesh.node_type[i] {
            NodeType::Wall => [0.0; 3],
            NodeType::Inlet => inlet.velocity_at(mesh.positions[i], q),
            _ => field.velocity_at(mesh.positions[i], q),
        })
        .collect()
}

/// Generates mesh, waveform and a one-period trajectory (`period / dt + 1`
/// frames, the last coinciding with the first).
pub fn generate_synthetic_case(geom_spec: &GeometrySpec, flow: &FlowSpec) -> Result<SyntheticCase> {
    if !(flow.dt > 0.0) {
        return Err(Error::InvalidArgument("dt must be positive".into()));
    }
    let (mesh, bulge_nodes) = build_mesh(geom_spec)?;
    let waveform = build_waveform(&flow.waveform, flow.seed)?;
    let field = FlowField::new(geom_spec, &flow.recirculation);
    let inlet = InletGeometry::from_mesh(&mesh)?;
    let steps = (waveform.period / flow.dt).round() as usize;
    let mut trajectory = Trajectory::new(mesh.content_hash(), flow.dt, mesh.num_nodes());
    for k in 0..=steps {
        let q = waveform.flow_at(k as f64 * flow.dt);
        trajectory.push_frame(&ground_truth_frame(&mesh, &field, &inlet, q));
    }
    Ok(SyntheticCase {
        mesh,
        waveform,
        trajectory,
        bulge_nodes,
        field,
    })
}
