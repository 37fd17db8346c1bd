use super::{Mesh, NodeType, Waveform};
use crate::error::{Error, Result};
use crate::geom::{self, Vec3};

/// Relative out-of-plane tolerance for inlet nodes.
const PLANARITY_TOL: f64 = 1e-6;

/// Planar inlet disk recovered from a mesh: centre, outward normal, radius
/// and lumped quadrature weights over the inlet faces.
#[derive(Debug, Clone)]
pub struct InletGeometry {
    pub nodes: Vec<usize>,
    pub center: Vec3,
    /// Outward unit normal; inflow runs along `-normal`.
    pub normal: Vec3,
    pub radius: f64,
    /// Nodes of the inlet faces (inlet nodes plus rim wall nodes) and their
    /// lumped area weights, mm^2.
    pub quadrature: Vec<(usize, f64)>,
}

impl InletGeometry {
    pub fn from_mesh(mesh: &Mesh) -> Result<Self> {
        let nodes = mesh.nodes_of_type(NodeType::Inlet);
        if nodes.is_empty() {
            return Err(Error::Geometry("mesh has no inlet nodes".into()));
        }
        let mut center = [0.0; 3];
        let mut nsum = [0.0; 3];
        for &i in &nodes {
            center = geom::add(center, mesh.positions[i]);
            nsum = geom::add(nsum, mesh.wall_normals[i]);
        }
        let center = geom::scale(center, 1.0 / nodes.len() as f64);
        let normal = geom::normalize(nsum);
        if geom::norm(normal) == 0.0 {
            return Err(Error::Geometry("inlet nodes carry no usable normal".into()));
        }
        let radial = |p: Vec3| {
            let d = geom::sub(p, center);
            let off = geom::dot(d, normal);
            (off, geom::norm(geom::sub(d, geom::scale(normal, off))))
        };
        let extent = nodes
            .iter()
            .map(|&i| radial(mesh.positions[i]).1)
            .fold(0.0, f64::max);
        let tol = PLANARITY_TOL * extent.max(f64::MIN_POSITIVE);
        for &i in &nodes {
            let (off, _) = radial(mesh.positions[i]);
            if off.abs() > tol {
                return Err(Error::Geometry(format!(
                    "inlet node {i} lies {off:e} mm off the inlet plane"
                )));
            }
        }
        let on_disk = |i: usize| {
            matches!(mesh.node_type[i], NodeType::Inlet | NodeType::Wall)
                && radial(mesh.positions[i]).0.abs() <= tol
        };
        let radius = (0..mesh.num_nodes())
            .filter(|&i| on_disk(i))
            .map(|i| radial(mesh.positions[i]).1)
            .fold(0.0, f64::max);
        if !(radius > 0.0) {
            return Err(Error::Geometry("inlet disk has zero radius".into()));
        }
        let mut weights = vec![0.0; mesh.num_nodes()];
        for [a, b, c] in mesh.boundary_faces() {
            if on_disk(a) && on_disk(b) && on_disk(c) {
                let (pa, pb, pc) = (mesh.positions[a], mesh.positions[b], mesh.positions[c]);
                let area = 0.5 * geom::norm(geom::cross(geom::sub(pb, pa), geom::sub(pc, pa)));
                for v in [a, b, c] {
                    weights[v] += area / 3.0;
                }
            }
        }
        let quadrature = weights
            .into_iter()
            .enumerate()
            .filter(|(_, w)| *w > 0.0)
            .collect();
        Ok(InletGeometry {
            nodes,
            center,
            normal,
            radius,
            quadrature,
        })
    }

    /// Peak (centreline) speed of the parabolic profile carrying flow `q`.
    pub fn peak_speed(&self, q: f64) -> f64 {
        2.0 * q / (std::f64::consts::PI * self.radius * self.radius)
    }

    /// Parabolic velocity at an arbitrary point of the inlet plane.
    pub fn velocity_at(&self, p: Vec3, q: f64) -> Vec3 {
        let d = geom::sub(p, self.center);
        let off = geom::dot(d, self.normal);
        let r = geom::norm(geom::sub(d, geom::scale(self.normal, off)));
        let s = (1.0 - (r * r) / (self.radius * self.radius)).max(0.0);
        geom::scale(self.normal, -self.peak_speed(q) * s)
    }

    /// Velocities on the inlet nodes (in `self.nodes` order) at time `t`.
    pub fn profile(&self, mesh: &Mesh, waveform: &Waveform, t: f64) -> Vec<Vec3> {
        let q = waveform.flow_at(t);
        self.nodes
            .iter()
            .map(|&i| self.velocity_at(mesh.positions[i], q))
            .collect()
    }

    /// Discrete flux `sum v . (-n) * w` of a full-mesh velocity field through the inlet.
    pub fn inflow(&self, velocity: &[Vec3]) -> f64 {
        self.quadrature
            .iter()
            .map(|&(i, w)| -geom::dot(velocity[i], self.normal) * w)
            .sum()
    }

    /// Mean, minimum and maximum speed of the prescribed profile at time `t`.
    pub fn speed_stats(&self, mesh: &Mesh, waveform: &Waveform, t: f64) -> [f64; 3] {
        let speeds: Vec<f64> = self
            .profile(mesh, waveform, t)
            .into_iter()
            .map(geom::norm)
            .collect();
        let mean = speeds.iter().sum::<f64>() / speeds.len() as f64;
        let min = speeds.iter().copied().fold(f64::INFINITY, f64::min);
        let max = speeds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        [mean, min, max]
    }
}

/// Parabolic inflow on every inlet node at time `t`, in the order of
/// `mesh.nodes_of_type(NodeType::Inlet)`.
pub fn inlet_profile(mesh: &Mesh, waveform: &Waveform, t: f64) -> Result<Vec<Vec3>> {
    Ok(InletGeometry::from_mesh(mesh)?.profile(mesh, waveform, t))
}
