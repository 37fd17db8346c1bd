//! Autoregressive rollout over a cardiac cycle and the error metrics used to
//! score it.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::graph::AugmentedAdjacency;
use crate::meshio::Trajectory;
use crate::model::{forward_step, FlowCase, Model};
use crate::scalar::Scalar;
use crate::train::NormStats;

/// Produces the next velocity field before boundary enforcement.
pub trait Stepper {
    /// `step` indexes the current time `t = step * dt`.
    fn next_velocity(&mut self, case: &FlowCase, u_t: &[Vec3], u_prev: &[Vec3], step: usize) -> Result<Vec<Vec3>>;
}

/// Learned surrogate.
pub struct ModelStepper<'a, T> {
    pub model: &'a Model<T>,
    pub stats: &'a NormStats,
    pub aug: &'a AugmentedAdjacency,
}

impl<T: Scalar> Stepper for ModelStepper<'_, T> {
    fn next_velocity(&mut self, case: &FlowCase, u_t: &[Vec3], u_prev: &[Vec3], step: usize) -> Result<Vec<Vec3>> {
        let t = step as f64 * case.dt;
        let t_next = (step + 1) as f64 * case.dt;
        forward_step(self.model, self.stats, case, self.aug, u_t, u_prev, t, t_next)
    }
}

/// Keeps the current state (zero increment).
pub struct PersistenceStepper;

impl Stepper for PersistenceStepper {
    fn next_velocity(&mut self, _: &FlowCase, u_t: &[Vec3], _: &[Vec3], _: usize) -> Result<Vec<Vec3>> {
        Ok(u_t.to_vec())
    }
}

/// Adds the true increment between stored frames `step` and `step + 1`.
pub struct OracleStepper<'a> {
    pub frames: &'a [Vec<Vec3>],
}

impl Stepper for OracleStepper<'_> {
    fn next_velocity(&mut self, _: &FlowCase, u_t: &[Vec3], _: &[Vec3], step: usize) -> Result<Vec<Vec3>> {
        let (a, b) = (
            self.frames.get(step).ok_or_else(|| Error::InvalidArgument(format!("no frame {step}")))?,
            self.frames.get(step + 1).ok_or_else(|| Error::InvalidArgument(format!("no frame {}", step + 1)))?,
        );
        Ok((0..u_t.len())
            .map(|i| [0, 1, 2].map(|c| u_t[i][c] + (b[i][c] - a[i][c])))
            .collect())
    }
}

#[derive(Debug, Clone)]
pub struct RolloutResult {
    /// `steps + 1` frames starting with the initial state.
    pub frames: Vec<Vec<Vec3>>,
    /// Wall-clock seconds per step.
    pub step_seconds: Vec<f64>,
    /// Steps after which the boundary conditions did not hold exactly.
    pub boundary_violations: Vec<usize>,
}

impl RolloutResult {
    pub fn to_trajectory(&self, mesh_hash: [u8; 32], dt: f64) -> Trajectory {
        let n = self.frames.first().map_or(0, Vec::len);
        let mut traj = Trajectory::new(mesh_hash, dt, n);
        for f in &self.frames {
            traj.push_frame(f);
        }
        traj
    }
}

/// Rolls `stepper` forward `steps` times from `initial` (time 0), with
/// `previous` the state one step earlier.
pub fn rollout(
    stepper: &mut dyn Stepper,
    case: &FlowCase,
    initial: &[Vec3],
    previous: &[Vec3],
    steps: usize,
) -> Result<RolloutResult> {
    let mut frames = Vec::with_capacity(steps + 1);
    frames.push(initial.to_vec());
    let mut prev = previous.to_vec();
    let mut step_seconds = Vec::with_capacity(steps);
    let mut boundary_violations = Vec::new();
    for k in 0..steps {
        let start = Instant::now();
        let cur = frames.last().expect("initial frame present");
        let mut next = stepper.next_velocity(case, cur, &prev, k)?;
        let t_next = (k + 1) as f64 * case.dt;
        case.enforce_boundaries(&mut next, t_next);
        if next.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite velocity at rollout step {}", k + 1)));
        }
        if !case.boundaries_hold(&next, t_next) {
            boundary_violations.push(k + 1);
        }
        step_seconds.push(start.elapsed().as_secs_f64());
        prev = cur.clone();
        frames.push(next);
    }
    Ok(RolloutResult { frames, step_seconds, boundary_violations })
}

/// A literal mean-of-squares error together with its square root.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ErrorPair {
    pub mse: f64,
    pub rmse: f64,
}

impl ErrorPair {
    fn new(mse: f64) -> Self {
        ErrorPair { mse, rmse: mse.sqrt() }
    }
}

/// `(1 / (T N)) sum_t sum_i |pred_t,i - truth_t,i|^2` over frames `1..=T`;
/// frame 0 is the shared initial condition and is skipped.
pub fn mean_squared_error(pred: &[Vec<Vec3>], truth: &[Vec<Vec3>]) -> Result<ErrorPair> {
    if pred.len() != truth.len() || pred.len() < 2 {
        return Err(Error::Shape(format!(
            "need matching series of at least two frames, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, g) in pred.iter().zip(truth).skip(1) {
        if p.len() != g.len() {
            return Err(Error::Shape("frames cover different node counts".into()));
        }
        for (a, b) in p.iter().zip(g) {
            let d = geom::sub(*a, *b);
            sum += geom::dot(d, d);
        }
        count += p.len();
    }
    Ok(ErrorPair::new(sum / count.max(1) as f64))
}

/// One-step error: every prediction starts from the true previous frame.
/// `truth[0]`'s predecessor is `previous`.
pub fn one_step_error(
    stepper: &mut dyn Stepper,
    case: &FlowCase,
    truth: &[Vec<Vec3>],
    previous: &[Vec3],
) -> Result<ErrorPair> {
    let mut pred = vec![truth[0].clone()];
    for k in 0..truth.len() - 1 {
        let prev = if k == 0 { previous } else { &truth[k - 1] };
        let mut next = stepper.next_velocity(case, &truth[k], prev, k)?;
        case.enforce_boundaries(&mut next, (k + 1) as f64 * case.dt);
        pred.push(next);
    }
    mean_squared_error(&pred, truth)
}

/// All-rollout error: predictions composed from `truth[0]`.
pub fn all_rollout_error(
    stepper: &mut dyn Stepper,
    case: &FlowCase,
    truth: &[Vec<Vec3>],
    previous: &[Vec3],
) -> Result<ErrorPair> {
    let r = rollout(stepper, case, &truth[0], previous, truth.len() - 1)?;
    mean_squared_error(&r.frames, truth)
}

/// Relative change `100 (gnn - cfd) / cfd` in percent; `None` when `cfd == 0`.
pub fn delta_metric(gnn: f64, cfd: f64) -> Option<f64> {
    (cfd != 0.0).then(|| 100.0 * (gnn - cfd) / cfd)
}

/// Mean Euclidean velocity error over frames `1..` and the given nodes, mm/s.
pub fn bulge_l2_error(pred: &[Vec<Vec3>], truth: &[Vec<Vec3>], nodes: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() || pred.len() < 2 || nodes.is_empty() {
        return Err(Error::Shape("bulge error needs matching series and a non-empty node set".into()));
    }
    let mut sum = 0.0;
    for (p, g) in pred.iter().zip(truth).skip(1) {
        for &i in nodes {
            sum += geom::norm(geom::sub(p[i], g[i]));
        }
    }
    Ok(sum / ((pred.len() - 1) * nodes.len()) as f64)
}

/// Mean speed over frames `1..` and the given nodes, mm/s.
pub fn mean_speed(frames: &[Vec<Vec3>], nodes: &[usize]) -> f64 {
    let mut sum = 0.0;
    for f in frames.iter().skip(1) {
        for &i in nodes {
            sum += geom::norm(f[i]);
        }
    }
    sum / ((frames.len().max(2) - 1) * nodes.len().max(1)) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_fixtures() {
        let truth = vec![vec![[0.0; 3]], vec![[1.0, 1.0, 1.0]]];
        assert_eq!(mean_squared_error(&truth, &truth).unwrap().mse, 0.0);
        let pred = vec![vec![[0.0; 3]], vec![[4.0, 5.0, 1.0]]];
        assert_eq!(mean_squared_error(&pred, &truth).unwrap().mse, 25.0);
        assert_eq!(mean_squared_error(&pred, &truth).unwrap().rmse, 5.0);
        let eps = 0.25;
        let shifted: Vec<Vec<Vec3>> = truth.iter().map(|f| f.iter().map(|v| v.map(|c| c + eps)).collect()).collect();
        assert_eq!(mean_squared_error(&shifted, &truth).unwrap().mse, 3.0 * eps * eps);
        assert_eq!(bulge_l2_error(&pred, &truth, &[0]).unwrap(), 5.0);
    }

    #[test]
    fn delta_fixtures() {
        assert_eq!(delta_metric(3.0, 3.0), Some(0.0));
        assert_eq!(delta_metric(1.0, 2.0), Some(-50.0));
        assert_eq!(delta_metric(1.0, 0.0), None);
    }
}
