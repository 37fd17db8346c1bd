use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::graph::{build_adjacency, Adjacency};
use crate::meshio::{InletGeometry, Mesh, NodeType, Trajectory, Waveform};
use crate::tensor::Tensor2;

/// Number of per-node input features.
pub const NUM_FEATURES: usize = 15;
/// Number of per-node outputs (velocity increment).
pub const NUM_OUTPUTS: usize = 3;

/// Column layout of a feature frame.
pub mod col {
    pub const VELOCITY: usize = 0;
    pub const ACCELERATION: usize = 3;
    pub const POSITION: usize = 6;
    pub const INLET_DISTANCE: usize = 9;
    pub const SPEED: usize = 10;
    pub const INFLOW_MEAN: usize = 11;
    pub const INFLOW_MIN: usize = 12;
    pub const INFLOW_MAX: usize = 13;
    pub const NODE_TYPE: usize = 14;
}

/// Raw (unnormalised) `N x 15` node features at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame {
    pub data: Tensor2<f64>,
}

impl FeatureFrame {
    pub fn num_nodes(&self) -> usize {
        self.data.rows()
    }

    pub fn velocity(&self, i: usize) -> Vec3 {
        let r = self.data.row(i);
        [r[0], r[1], r[2]]
    }
}

/// A mesh with everything needed to build features and enforce boundary
/// conditions for one inflow waveform.
#[derive(Debug, Clone)]
pub struct FlowCase {
    pub mesh: Mesh,
    pub inlet: InletGeometry,
    pub waveform: Waveform,
    pub dt: f64,
    pub graph: Adjacency,
    wall_nodes: Vec<usize>,
    /// Nodes whose next value is not overwritten by boundary enforcement.
    free_nodes: Vec<usize>,
}

impl FlowCase {
    pub fn new(mesh: Mesh, waveform: Waveform, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument("time step must be positive".into()));
        }
        mesh.validate()?;
        waveform.validate()?;
        let inlet = InletGeometry::from_mesh(&mesh)?;
        let graph = build_adjacency(&mesh);
        let wall_nodes = mesh.nodes_of_type(NodeType::Wall);
        let free_nodes = (0..mesh.num_nodes())
            .filter(|&i| matches!(mesh.node_type[i], NodeType::Interior | NodeType::Outlet))
            .collect();
        Ok(FlowCase { mesh, inlet, waveform, dt, graph, wall_nodes, free_nodes })
    }

    pub fn num_nodes(&self) -> usize {
        self.mesh.num_nodes()
    }

    pub fn free_nodes(&self) -> &[usize] {
        &self.free_nodes
    }

    /// Number of steps that cover one waveform period.
    pub fn steps_per_cycle(&self) -> usize {
        (self.waveform.period / self.dt - 1e-9).ceil() as usize
    }

    /// Features for predicting the state at `t + dt` from `u_t` and `u_prev`.
    pub fn features(&self, u_t: &[Vec3], u_prev: &[Vec3], t: f64) -> FeatureFrame {
        let n = self.num_nodes();
        assert!(u_t.len() == n && u_prev.len() == n, "velocity fields must cover every node");
        let stats = self.inlet.speed_stats(&self.mesh, &self.waveform, t + self.dt);
        let mut data = Tensor2::zeros(n, NUM_FEATURES);
        for i in 0..n {
            let row = data.row_mut(i);
            let (u, p) = (u_t[i], self.mesh.positions[i]);
            for c in 0..3 {
                row[col::VELOCITY + c] = u[c];
                row[col::ACCELERATION + c] = u[c] - u_prev[i][c];
                row[col::POSITION + c] = p[c];
            }
            row[col::INLET_DISTANCE] = self.mesh.inlet_distance[i];
            row[col::SPEED] = geom::norm(u);
            row[col::INFLOW_MEAN] = stats[0];
            row[col::INFLOW_MIN] = stats[1];
            row[col::INFLOW_MAX] = stats[2];
            row[col::NODE_TYPE] = self.mesh.node_type[i].code() as f64;
        }
        FeatureFrame { data }
    }

    /// Zero on walls, prescribed parabola on the inlet at time `t_next`.
    pub fn enforce_boundaries(&self, u: &mut [Vec3], t_next: f64) {
        for &i in &self.wall_nodes {
            u[i] = [0.0; 3];
        }
        let q = self.waveform.flow_at(t_next);
        for &i in &self.inlet.nodes {
            u[i] = self.inlet.velocity_at(self.mesh.positions[i], q);
        }
    }

    /// Checks that `u` satisfies the boundary conditions at `t` exactly.
    pub fn boundaries_hold(&self, u: &[Vec3], t: f64) -> bool {
        let q = self.waveform.flow_at(t);
        self.wall_nodes.iter().all(|&i| u[i] == [0.0; 3])
            && self
                .inlet
                .nodes
                .iter()
                .all(|&i| u[i] == self.inlet.velocity_at(self.mesh.positions[i], q))
    }

    /// Ground-truth frames of a stored trajectory as `f64` vectors.
    pub fn frames(&self, traj: &Trajectory) -> Result<Vec<Vec<Vec3>>> {
        if traj.num_nodes != self.num_nodes() {
            return Err(Error::Shape(format!(
                "trajectory has {} nodes, mesh has {}",
                traj.num_nodes,
                self.num_nodes()
            )));
        }
        Ok((0..traj.num_steps()).map(|k| traj.frame_f64(k)).collect())
    }
}
