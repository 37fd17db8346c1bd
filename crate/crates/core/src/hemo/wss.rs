use rayon::prelude::*;

use super::casson::{casson_viscosity, CassonParams};
use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::meshio::{Mesh, NodeType};

/// Row-major 3x3 matrix; for gradients `g[i][j] = d u_i / d x_j`.
pub type Mat3 = [[f64; 3]; 3];

/// Constant velocity gradient of every linear tet, 1/s for mm and mm/s.
pub fn velocity_gradient(mesh: &Mesh, velocity: &[Vec3]) -> Result<Vec<Mat3>> {
    if velocity.len() != mesh.num_nodes() {
        return Err(Error::Shape(format!(
            "velocity field has {} nodes, mesh has {}",
            velocity.len(),
            mesh.num_nodes()
        )));
    }
    let inverses = edge_inverses(mesh)?;
    Ok(mesh.tets.iter().zip(&inverses).map(|(tet, inv)| tet_gradient(tet, inv, velocity)).collect())
}

/// Inverse of the edge matrix `[p1 - p0; p2 - p0; p3 - p0]` of every tet.
fn edge_inverses(mesh: &Mesh) -> Result<Vec<Mat3>> {
    mesh.tets
        .iter()
        .enumerate()
        .map(|(t, &[a, b, c, d])| {
            let p0 = mesh.positions[a];
            let e = [mesh.positions[b], mesh.positions[c], mesh.positions[d]].map(|p| geom::sub(p, p0));
            geom::invert3(e).ok_or_else(|| Error::Geometry(format!("tet {t} is degenerate")))
        })
        .collect()
}

fn tet_gradient(tet: &[usize; 4], inv: &Mat3, velocity: &[Vec3]) -> Mat3 {
    let u0 = velocity[tet[0]];
    let du = [1, 2, 3].map(|k| geom::sub(velocity[tet[k]], u0));
    // Edge differences satisfy du[k] = G e_k, so G^T = E^-1 dU.
    let mut g = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            g[i][j] = (0..3).map(|k| inv[j][k] * du[k][i]).sum();
        }
    }
    g
}

/// Symmetric part of a gradient.
pub fn strain_rate(g: &Mat3) -> Mat3 {
    let mut e = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            e[i][j] = 0.5 * (g[i][j] + g[j][i]);
        }
    }
    e
}

/// Scalar shear rate `sqrt(2 e:e)`.
pub fn shear_rate(e: &Mat3) -> f64 {
    (2.0 * e.iter().flatten().map(|x| x * x).sum::<f64>()).sqrt()
}

/// Tangential viscous traction `2 mu e n - ((2 mu e n) . n) n` for unit `n`.
pub fn tangential_traction(e: &Mat3, n: Vec3, mu: f64) -> Vec3 {
    let t = [0, 1, 2].map(|i| 2.0 * mu * geom::dot(e[i], n));
    geom::sub(t, geom::scale(n, geom::dot(t, n)))
}

/// Precomputed wall-shear operator: for each wall node, its incident tets
/// with volume weights and its outward normal.
#[derive(Debug, Clone)]
pub struct WallShear {
    pub wall_nodes: Vec<usize>,
    normals: Vec<Vec3>,
    inverses: Vec<Mat3>,
    /// Per wall node, `(tet, weight)` with weights summing to one.
    incident: Vec<Vec<(usize, f64)>>,
    params: CassonParams,
}

impl WallShear {
    /// Operator over the mesh's wall nodes.
    pub fn new(mesh: &Mesh, params: CassonParams) -> Result<Self> {
        Self::for_nodes(mesh, mesh.nodes_of_type(NodeType::Wall), params)
    }

    pub fn for_nodes(mesh: &Mesh, wall_nodes: Vec<usize>, params: CassonParams) -> Result<Self> {
        params.validate()?;
        let n = mesh.num_nodes();
        let mut slot = vec![usize::MAX; n];
        for (s, &i) in wall_nodes.iter().enumerate() {
            if i >= n {
                return Err(Error::InvalidArgument(format!("wall node {i} is outside the mesh")));
            }
            slot[i] = s;
        }
        let mut incident = vec![Vec::new(); wall_nodes.len()];
        for (t, tet) in mesh.tets.iter().enumerate() {
            let vol = mesh.signed_volume(t).abs();
            for &v in tet {
                if slot[v] != usize::MAX {
                    incident[slot[v]].push((t, vol));
                }
            }
        }
        for (s, list) in incident.iter_mut().enumerate() {
            let total: f64 = list.iter().map(|p| p.1).sum();
            if list.is_empty() || !(total > 0.0) {
                return Err(Error::Geometry(format!("wall node {} has no adjacent tets", wall_nodes[s])));
            }
            list.iter_mut().for_each(|p| p.1 /= total);
        }
        let normals: Vec<Vec3> = wall_nodes.iter().map(|&i| mesh.wall_normals[i]).collect();
        if let Some(s) = normals.iter().position(|nrm| (geom::norm(*nrm) - 1.0).abs() > 1e-9) {
            return Err(Error::Geometry(format!("wall node {} has no unit normal", wall_nodes[s])));
        }
        Ok(WallShear { wall_nodes, normals, inverses: edge_inverses(mesh)?, incident, params })
    }

    /// Volume-weighted strain rate at each wall node.
    pub fn wall_strain(&self, mesh: &Mesh, velocity: &[Vec3]) -> Result<Vec<Mat3>> {
        if velocity.len() != mesh.num_nodes() || self.inverses.len() != mesh.tets.len() {
            return Err(Error::Shape("velocity field or mesh does not match the operator".into()));
        }
        Ok(self
            .incident
            .par_iter()
            .map(|list| {
                let mut acc = [[0.0; 3]; 3];
                for &(t, w) in list {
                    let e = strain_rate(&tet_gradient(&mesh.tets[t], &self.inverses[t], velocity));
                    for i in 0..3 {
                        for j in 0..3 {
                            acc[i][j] += w * e[i][j];
                        }
                    }
                }
                acc
            })
            .collect())
    }

    /// Wall shear stress vectors (Pa) at the wall nodes, in order.
    pub fn apply(&self, mesh: &Mesh, velocity: &[Vec3]) -> Result<Vec<Vec3>> {
        let strain = self.wall_strain(mesh, velocity)?;
        strain
            .iter()
            .zip(&self.normals)
            .map(|(e, &n)| {
                let mu = casson_viscosity(shear_rate(e), &self.params)?;
                Ok(tangential_traction(e, n, mu))
            })
            .collect()
    }
}

/// Wall shear stress at every wall node of `mesh` for one velocity field.
pub fn wss_vectors(mesh: &Mesh, velocity: &[Vec3], params: CassonParams) -> Result<(Vec<usize>, Vec<Vec3>)> {
    let op = WallShear::new(mesh, params)?;
    let wss = op.apply(mesh, velocity)?;
    Ok((op.wall_nodes, wss))
}
