use serde::{Deserialize, Serialize};

use super::indices::WallField;
use super::risk::RiskMetrics;
use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::meshio::{Mesh, NodeType};

/// How spatial peaks are taken over the bulge wall.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeakMode {
    /// Linear-interpolated percentile in `[0, 100]`.
    Percentile(f64),
    Max,
}

impl Default for PeakMode {
    fn default() -> Self {
        PeakMode::Percentile(99.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricOptions {
    #[serde(default)]
    pub peak: PeakMode,
    /// Divide the systolic bulge speed by the mean inlet speed at systole.
    #[serde(default)]
    pub normalize_velocity: bool,
}

/// Percentile of `values` with linear interpolation between order statistics.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() || !(0.0..=100.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("percentile {p} of {} values", values.len())));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = p / 100.0 * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    Ok(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

fn peak(values: &[f64], mode: PeakMode) -> Result<f64> {
    match mode {
        PeakMode::Percentile(p) => percentile(values, p),
        PeakMode::Max if values.is_empty() => Err(Error::InvalidArgument("peak of an empty set".into())),
        PeakMode::Max => Ok(values.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
    }
}

/// Frame with the largest mean inlet speed.
pub fn systole_step(mesh: &Mesh, frames: &[Vec<Vec3>]) -> Result<usize> {
    let inlet = mesh.nodes_of_type(NodeType::Inlet);
    if inlet.is_empty() || frames.is_empty() {
        return Err(Error::InvalidArgument("systole needs inlet nodes and at least one frame".into()));
    }
    let speeds: Vec<f64> = frames.iter().map(|f| mean_speed(f, &inlet)).collect();
    Ok((0..speeds.len()).fold(0, |b, k| if speeds[k] > speeds[b] { k } else { b }))
}

fn mean_speed(frame: &[Vec3], nodes: &[usize]) -> f64 {
    nodes.iter().map(|&i| geom::norm(frame[i])).sum::<f64>() / nodes.len().max(1) as f64
}

/// Risk metrics of one cycle restricted to the bulge: mean TAWSS and peak
/// shear and OSI over the bulge wall, mean bulge speed at systole.
pub fn extract_metrics(
    mesh: &Mesh,
    frames: &[Vec<Vec3>],
    wall: &WallField,
    bulge_nodes: &[usize],
    options: MetricOptions,
) -> Result<RiskMetrics> {
    if frames.len() != wall.num_steps() {
        return Err(Error::Shape(format!("{} frames but {} shear steps", frames.len(), wall.num_steps())));
    }
    if bulge_nodes.is_empty() {
        return Err(Error::InvalidArgument("bulge node set is empty".into()));
    }
    let mut in_bulge = vec![false; mesh.num_nodes()];
    for &i in bulge_nodes {
        *in_bulge.get_mut(i).ok_or_else(|| Error::InvalidArgument(format!("bulge node {i} is outside the mesh")))? =
            true;
    }
    let slots: Vec<usize> = (0..wall.wall_nodes.len()).filter(|&s| in_bulge[wall.wall_nodes[s]]).collect();
    if slots.is_empty() {
        return Err(Error::InvalidArgument("no wall node lies in the bulge".into()));
    }
    let peaks = wall.peak_magnitude();
    let tawss_mean = slots.iter().map(|&s| wall.tawss[s]).sum::<f64>() / slots.len() as f64;
    let peak_wss = peak(&slots.iter().map(|&s| peaks[s]).collect::<Vec<_>>(), options.peak)?;
    let osi_max = peak(&slots.iter().map(|&s| wall.osi[s]).collect::<Vec<_>>(), options.peak)?;
    let k = systole_step(mesh, frames)?;
    let mut systolic_velocity = mean_speed(&frames[k], bulge_nodes);
    if options.normalize_velocity {
        let inlet = mean_speed(&frames[k], &mesh.nodes_of_type(NodeType::Inlet));
        if !(inlet > 0.0) {
            return Err(Error::Numerical("mean inlet speed at systole is zero".into()));
        }
        systolic_velocity /= inlet;
    }
    Ok(RiskMetrics { tawss_mean, peak_wss, osi_max, systolic_velocity })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_interpolates() {
        let v = [4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(percentile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(percentile(&v, 100.0).unwrap(), 5.0);
        assert_eq!(percentile(&v, 50.0).unwrap(), 3.0);
        assert!((percentile(&v, 99.0).unwrap() - 4.96).abs() < 1e-12);
        assert!(percentile(&[], 50.0).is_err());
        assert_eq!(peak(&v, PeakMode::Max).unwrap(), 5.0);
    }
}
