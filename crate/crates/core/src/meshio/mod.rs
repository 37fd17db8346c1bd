//! Mesh, waveform and trajectory data model plus their on-disk formats.

mod format;
pub(crate) use format::Cursor;
mod inlet;
mod synth;

pub use format::{
    load_mesh, load_trajectory, load_waveform, read_mesh, read_trajectory, read_waveform,
    save_mesh, save_trajectory, save_waveform, write_mesh, write_trajectory, write_waveform,
    MESH_MAGIC, TRAJ_MAGIC,
};
pub use inlet::{inlet_profile, InletGeometry};
pub use synth::{
    generate_synthetic_case, FlowField, FlowSpec, GeometrySpec, RecirculationParams,
    SyntheticCase, WaveformParams,
};

use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};

/// Default sampling interval of stored trajectories, seconds.
pub const DEFAULT_DT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum NodeType {
    Interior = 0,
    Wall = 1,
    Inlet = 2,
    Outlet = 3,
}

impl NodeType {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(NodeType::Interior),
            1 => Some(NodeType::Wall),
            2 => Some(NodeType::Inlet),
            3 => Some(NodeType::Outlet),
            _ => None,
        }
    }
}

/// Tetrahedral volume mesh. Lengths are millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub positions: Vec<Vec3>,
    pub tets: Vec<[usize; 4]>,
    pub node_type: Vec<NodeType>,
    pub inlet_distance: Vec<f64>,
    /// Outward unit normals on boundary nodes, zero on interior nodes.
    pub wall_normals: Vec<Vec3>,
}

impl Mesh {
    pub fn num_nodes(&self) -> usize {
        self.positions.len()
    }

    pub fn signed_volume(&self, tet: usize) -> f64 {
        let [a, b, c, d] = self.tets[tet];
        geom::tet_volume(
            self.positions[a],
            self.positions[b],
            self.positions[c],
            self.positions[d],
        )
    }

    /// Swaps two vertices of every negatively oriented tet.
    pub fn orient_tets(&mut self) {
        for t in 0..self.tets.len() {
            if self.signed_volume(t) < 0.0 {
                self.tets[t].swap(2, 3);
            }
        }
    }

    pub fn nodes_of_type(&self, kind: NodeType) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&i| self.node_type[i] == kind)
            .collect()
    }

    /// Boundary faces (faces owned by exactly one tet), wound so the
    /// right-hand normal points out of the mesh.
    pub fn boundary_faces(&self) -> Vec<[usize; 3]> {
        let mut seen: HashMap<[usize; 3], (u32, usize)> = HashMap::new();
        for tet in &self.tets {
            for skip in 0..4 {
                let mut key = [0usize; 3];
                let mut k = 0;
                for (v, &node) in tet.iter().enumerate() {
                    if v != skip {
                        key[k] = node;
                        k += 1;
                    }
                }
                key.sort_unstable();
                let e = seen.entry(key).or_insert((0, tet[skip]));
                e.0 += 1;
            }
        }
        let mut faces: Vec<[usize; 3]> = seen
            .into_iter()
            .filter(|(_, (c, _))| *c == 1)
            .map(|(key, (_, opposite))| {
                let [a, b, c] = key;
                let (pa, pb, pc) = (self.positions[a], self.positions[b], self.positions[c]);
                let nrm = geom::cross(geom::sub(pb, pa), geom::sub(pc, pa));
                if geom::dot(nrm, geom::sub(self.positions[opposite], pa)) > 0.0 {
                    [a, c, b]
                } else {
                    [a, b, c]
                }
            })
            .collect();
        faces.sort_unstable();
        faces
    }

    /// Area-weighted average of incident boundary-face normals on every
    /// boundary node; interior nodes get zero.
    pub fn compute_wall_normals(&mut self) {
        let mut acc = vec![[0.0; 3]; self.num_nodes()];
        for [a, b, c] in self.boundary_faces() {
            let (pa, pb, pc) = (self.positions[a], self.positions[b], self.positions[c]);
            // Cross product length is twice the face area.
            let nrm = geom::cross(geom::sub(pb, pa), geom::sub(pc, pa));
            for v in [a, b, c] {
                acc[v] = geom::add(acc[v], nrm);
            }
        }
        self.wall_normals = acc
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                if self.node_type[i] == NodeType::Interior {
                    [0.0; 3]
                } else {
                    geom::normalize(v)
                }
            })
            .collect();
    }

    /// Checks every structural invariant of a mesh.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        if self.node_type.len() != n || self.inlet_distance.len() != n || self.wall_normals.len() != n
        {
            return Err(Error::Geometry("per-node arrays disagree in length".into()));
        }
        for (t, tet) in self.tets.iter().enumerate() {
            for &v in tet {
                if v >= n {
                    return Err(Error::Geometry(format!("tet {t} references node {v} >= {n}")));
                }
            }
            for a in 0..4 {
                for b in a + 1..4 {
                    if tet[a] == tet[b] {
                        return Err(Error::Geometry(format!("tet {t} has repeated vertex")));
                    }
                }
            }
            if self.signed_volume(t) <= 0.0 {
                return Err(Error::Geometry(format!("tet {t} has non-positive volume")));
            }
        }
        for i in 0..n {
            let d = self.inlet_distance[i];
            if !(d >= 0.0) {
                return Err(Error::Geometry(format!("node {i} has negative inlet distance")));
            }
            if self.node_type[i] == NodeType::Inlet {
                if d != 0.0 {
                    return Err(Error::Geometry(format!("inlet node {i} has nonzero distance")));
                }
                if geom::norm(self.wall_normals[i]) == 0.0 {
                    return Err(Error::Geometry(format!("inlet node {i} has no normal")));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical `HSM1` encoding.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut buf = Vec::new();
        write_mesh(self, &mut buf).expect("writing to a Vec cannot fail");
        Sha256::digest(&buf).into()
    }
}

/// Periodic piecewise-linear inflow waveform. Flow rate in mm^3/s.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub period: f64,
    /// `(t, q)` pairs with `t` strictly increasing in `[0, period)`.
    pub samples: Vec<(f64, f64)>,
}

impl Waveform {
    pub fn new(period: f64, samples: Vec<(f64, f64)>) -> Result<Self> {
        let w = Waveform { period, samples };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.period > 0.0) || !self.period.is_finite() {
            return Err(Error::InvalidArgument("waveform period must be positive".into()));
        }
        if self.samples.is_empty() {
            return Err(Error::InvalidArgument("waveform has no samples".into()));
        }
        let mut prev = f64::NEG_INFINITY;
        for &(t, q) in &self.samples {
            if !(t >= 0.0 && t < self.period) || t <= prev {
                return Err(Error::InvalidArgument(format!(
                    "waveform times must increase strictly within [0, period); got {t}"
                )));
            }
            if !(q > 0.0) || !q.is_finite() {
                return Err(Error::InvalidArgument(format!("waveform flow must be positive; got {q}")));
            }
            prev = t;
        }
        Ok(())
    }

    /// Constant waveform, mostly useful for steady cases.
    pub fn constant(period: f64, q: f64) -> Result<Self> {
        Waveform::new(period, vec![(0.0, q)])
    }

    /// Flow rate at time `t`, wrapping periodically.
    pub fn flow_at(&self, t: f64) -> f64 {
        let k = self.samples.len();
        if k == 1 {
            return self.samples[0].1;
        }
        let tau = t.rem_euclid(self.period);
        // Index of the last sample at or before tau (wrapping to the tail).
        let idx = self.samples.partition_point(|&(ts, _)| ts <= tau);
        let (t0, q0, t1, q1) = if idx == 0 {
            let (tl, ql) = self.samples[k - 1];
            let (tf, qf) = self.samples[0];
            (tl - self.period, ql, tf, qf)
        } else if idx == k {
            let (tl, ql) = self.samples[k - 1];
            let (tf, qf) = self.samples[0];
            (tl, ql, tf + self.period, qf)
        } else {
            let (ta, qa) = self.samples[idx - 1];
            let (tb, qb) = self.samples[idx];
            (ta, qa, tb, qb)
        };
        let w = (tau - t0) / (t1 - t0);
        q0 + w * (q1 - q0)
    }

    pub fn mean_flow(&self, resolution: usize) -> f64 {
        let n = resolution.max(1);
        (0..n)
            .map(|i| self.flow_at(self.period * i as f64 / n as f64))
            .sum::<f64>()
            / n as f64
    }
}

/// Velocity trajectory sampled every `dt` seconds, stored in `f32`
/// (the on-disk precision) as `steps x nodes x 3`, mm/s.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub mesh_hash: [u8; 32],
    pub dt: f64,
    pub num_nodes: usize,
    pub velocity: Vec<f32>,
}

impl Trajectory {
    pub fn new(mesh_hash: [u8; 32], dt: f64, num_nodes: usize) -> Self {
        Trajectory {
            mesh_hash,
            dt,
            num_nodes,
            velocity: Vec::new(),
        }
    }

    pub fn num_steps(&self) -> usize {
        if self.num_nodes == 0 {
            0
        } else {
            self.velocity.len() / (self.num_nodes * 3)
        }
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let s = self.num_nodes * 3;
        &self.velocity[t * s..(t + 1) * s]
    }

    pub fn frame_f64(&self, t: usize) -> Vec<Vec3> {
        self.frame(t)
            .chunks_exact(3)
            .map(|c| [c[0] as f64, c[1] as f64, c[2] as f64])
            .collect()
    }

    pub fn push_frame(&mut self, frame: &[Vec3]) {
        assert_eq!(frame.len(), self.num_nodes, "frame size must match node count");
        for v in frame {
            self.velocity.extend(v.iter().map(|&x| x as f32));
        }
    }

    /// Checks that every wall node is exactly zero in every frame.
    pub fn walls_are_zero(&self, mesh: &Mesh) -> bool {
        let walls = mesh.nodes_of_type(NodeType::Wall);
        (0..self.num_steps()).all(|t| {
            let f = self.frame(t);
            walls
                .iter()
                .all(|&w| f[3 * w] == 0.0 && f[3 * w + 1] == 0.0 && f[3 * w + 2] == 0.0)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn single_tet() -> Mesh {
        let mut m = Mesh {
            positions: vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            tets: vec![[0, 1, 2, 3]],
            node_type: vec![NodeType::Inlet, NodeType::Wall, NodeType::Wall, NodeType::Outlet],
            inlet_distance: vec![0.0, 0.5, 0.5, 1.0],
            wall_normals: vec![[0.0; 3]; 4],
        };
        m.compute_wall_normals();
        m
    }

    #[test]
    fn single_tet_is_valid_with_outward_normals() {
        let m = single_tet();
        m.validate().unwrap();
        assert_eq!(m.boundary_faces().len(), 4);
        // The vertex at the origin sees faces with normals -x, -y, -z.
        let n0 = m.wall_normals[0];
        let s = -1.0 / 3f64.sqrt();
        for c in n0 {
            assert!((c - s).abs() < 1e-12);
        }
    }

    #[test]
    fn orientation_fix_makes_volume_positive() {
        let mut m = single_tet();
        m.tets[0].swap(0, 1);
        assert!(m.signed_volume(0) < 0.0);
        m.orient_tets();
        assert!(m.signed_volume(0) > 0.0);
    }

    #[test]
    fn validate_rejects_bad_index_and_inlet_distance() {
        let mut m = single_tet();
        m.tets[0][3] = 9;
        assert!(m.validate().is_err());
        let mut m = single_tet();
        m.inlet_distance[0] = 0.1;
        assert!(m.validate().is_err());
    }

    #[test]
    fn waveform_interpolates_linearly_and_wraps() {
        let w = Waveform::new(1.0, vec![(0.0, 10.0), (0.5, 20.0)]).unwrap();
        assert_eq!(w.flow_at(0.25), 15.0);
        assert_eq!(w.flow_at(0.5), 20.0);
        // Between the last sample and the wrapped first one.
        assert!((w.flow_at(0.75) - 15.0).abs() < 1e-12);
        assert!((w.flow_at(1.25) - 15.0).abs() < 1e-12);
        assert!((w.flow_at(-0.75) - 15.0).abs() < 1e-12);
    }

    #[test]
    fn waveform_rejects_nonpositive_flow_and_bad_times() {
        assert!(Waveform::new(1.0, vec![(0.0, 0.0)]).is_err());
        assert!(Waveform::new(1.0, vec![(0.0, 1.0), (0.0, 2.0)]).is_err());
        assert!(Waveform::new(1.0, vec![(1.0, 1.0)]).is_err());
        assert!(Waveform::new(0.0, vec![(0.0, 1.0)]).is_err());
    }
}
