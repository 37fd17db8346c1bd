use std::io::Write;
use std::path::Path;

use super::casson::CassonParams;
use super::wss::WallShear;
use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::meshio::{Cursor, Mesh};

pub const WALL_MAGIC: &[u8; 4] = b"HSW1";

/// Trapezoid integral of `f` over samples spaced `dt` apart.
fn trapezoid(values: impl Iterator<Item = f64>, dt: f64) -> f64 {
    let mut prev: Option<f64> = None;
    let mut sum = 0.0;
    for v in values {
        if let Some(p) = prev {
            sum += 0.5 * (p + v) * dt;
        }
        prev = Some(v);
    }
    sum
}

fn check_series(series: &[Vec3], dt: f64) -> Result<()> {
    if series.is_empty() {
        return Err(Error::InvalidArgument("shear series is empty".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("time step {dt} must be positive")));
    }
    Ok(())
}

/// Time-averaged shear magnitude of one node's series; a single sample is
/// its own average.
pub fn tawss(series: &[Vec3], dt: f64) -> Result<f64> {
    check_series(series, dt)?;
    if series.len() == 1 {
        return Ok(geom::norm(series[0]));
    }
    let period = (series.len() - 1) as f64 * dt;
    Ok(trapezoid(series.iter().map(|&t| geom::norm(t)), dt) / period)
}

/// Oscillatory shear index of one node's series, clamped to `[0, 0.5]`;
/// zero when the shear vanishes throughout.
pub fn osi(series: &[Vec3], dt: f64) -> Result<f64> {
    check_series(series, dt)?;
    if series.len() == 1 {
        return Ok(0.0);
    }
    let magnitude = trapezoid(series.iter().map(|&t| geom::norm(t)), dt);
    if magnitude == 0.0 {
        return Ok(0.0);
    }
    let vector = [0, 1, 2].map(|c| trapezoid(series.iter().map(|t| t[c]), dt));
    Ok((0.5 * (1.0 - geom::norm(vector) / magnitude)).clamp(0.0, 0.5))
}

/// Wall shear history of one cycle with its time-averaged indices.
#[derive(Debug, Clone, PartialEq)]
pub struct WallField {
    pub wall_nodes: Vec<usize>,
    pub dt: f64,
    /// `wss[step][slot]`, Pa.
    pub wss: Vec<Vec<Vec3>>,
    pub tawss: Vec<f64>,
    pub osi: Vec<f64>,
}

impl WallField {
    /// Shear at every wall node of every frame, then TAWSS and OSI.
    pub fn compute(mesh: &Mesh, frames: &[Vec<Vec3>], dt: f64, params: CassonParams) -> Result<Self> {
        let op = WallShear::new(mesh, params)?;
        Self::with_operator(&op, mesh, frames, dt)
    }

    pub fn with_operator(op: &WallShear, mesh: &Mesh, frames: &[Vec<Vec3>], dt: f64) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::InvalidArgument("no frames to post-process".into()));
        }
        let wss = frames.iter().map(|f| op.apply(mesh, f)).collect::<Result<Vec<_>>>()?;
        Self::from_series(op.wall_nodes.clone(), dt, wss)
    }

    pub fn from_series(wall_nodes: Vec<usize>, dt: f64, wss: Vec<Vec<Vec3>>) -> Result<Self> {
        if wss.iter().any(|f| f.len() != wall_nodes.len()) {
            return Err(Error::Shape("every shear frame must cover every wall node".into()));
        }
        let mut tawss_v = Vec::with_capacity(wall_nodes.len());
        let mut osi_v = Vec::with_capacity(wall_nodes.len());
        for s in 0..wall_nodes.len() {
            let series: Vec<Vec3> = wss.iter().map(|f| f[s]).collect();
            tawss_v.push(tawss(&series, dt)?);
            osi_v.push(osi(&series, dt)?);
        }
        Ok(WallField { wall_nodes, dt, wss, tawss: tawss_v, osi: osi_v })
    }

    pub fn num_steps(&self) -> usize {
        self.wss.len()
    }

    /// Largest shear magnitude over time at each wall node.
    pub fn peak_magnitude(&self) -> Vec<f64> {
        (0..self.wall_nodes.len())
            .map(|s| self.wss.iter().map(|f| geom::norm(f[s])).fold(0.0, f64::max))
            .collect()
    }

    /// Binary layout: magic, `dt` f64, step count u64, node count u64, node
    /// ids u64, shear vectors f32 (step-major), then TAWSS and OSI as f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.wall_nodes.len();
        let mut buf = Vec::with_capacity(28 + n * (24 + 12 * self.wss.len()));
        buf.extend_from_slice(WALL_MAGIC);
        buf.extend_from_slice(&self.dt.to_le_bytes());
        buf.extend_from_slice(&(self.wss.len() as u64).to_le_bytes());
        buf.extend_from_slice(&(n as u64).to_le_bytes());
        for &i in &self.wall_nodes {
            buf.extend_from_slice(&(i as u64).to_le_bytes());
        }
        for v in self.wss.iter().flatten().flatten() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        for v in self.tawss.iter().chain(&self.osi) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        cur.magic(WALL_MAGIC)?;
        let dt = cur.f64("dt")?;
        let steps = cur.u64("step count")? as usize;
        let n = cur.count("wall node count", 8)?;
        let wall_nodes = (0..n).map(|_| cur.u64("wall node").map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let need = (steps as u128) * (n as u128) * 12 + (n as u128) * 16;
        if need != cur.remaining() as u128 {
            return Err(Error::format(
                cur.offset(),
                format!("{steps} steps x {n} nodes needs {need} bytes, payload has {}", cur.remaining()),
            ));
        }
        let mut wss = Vec::with_capacity(steps);
        for _ in 0..steps {
            let mut frame = Vec::with_capacity(n);
            for _ in 0..n {
                let mut v = [0.0; 3];
                for c in &mut v {
                    *c = cur.f32("shear")? as f64;
                }
                frame.push(v);
            }
            wss.push(frame);
        }
        let tawss = (0..n).map(|_| cur.f64("tawss")).collect::<Result<Vec<_>>>()?;
        let osi = (0..n).map(|_| cur.f64("osi")).collect::<Result<Vec<_>>>()?;
        cur.finish()?;
        Ok(WallField { wall_nodes, dt, wss, tawss, osi })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
