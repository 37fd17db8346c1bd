use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Trainable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Broad population of geometries.
    Pretrain,
    /// The few cases of the target population.
    FewShot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    Coarse,
    Fine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSelector {
    pub family: Family,
    pub resolution: Resolution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSpec {
    pub name: String,
    pub dataset: DatasetSelector,
    pub steps: u64,
    pub lr_max: f64,
    pub lr_min: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Per-axis noise standard deviation on velocity and acceleration, mm/s.
    pub noise_sigma: [f64; 3],
    /// Fraction of nodes hidden per sample; 0 trains on the full graph.
    #[serde(default)]
    pub mask_ratio: f64,
    #[serde(default = "default_trainable")]
    pub trainable: Trainable,
}

fn default_batch() -> usize {
    2
}

fn default_trainable() -> Trainable {
    Trainable::All
}

impl PhaseSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("phase {}: {m}", self.name)));
        if self.steps == 0 {
            return fail("steps must be positive");
        }
        if !(self.lr_min > 0.0 && self.lr_max >= self.lr_min && self.lr_max.is_finite()) {
            return fail("need lr_max >= lr_min > 0");
        }
        if self.batch_size == 0 {
            return fail("batch size must be positive");
        }
        if self.noise_sigma.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return fail("noise sigma must be non-negative");
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return fail("mask ratio must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Axis-reduced noise for families whose vessels share one orientation.
pub const ALIGNED_NOISE: [f64; 3] = [10.0, 10.0, 1.0];
/// Isotropic noise for arbitrarily oriented vessels.
pub const ISOTROPIC_NOISE: [f64; 3] = [10.0, 10.0, 10.0];
/// Default masked-pretraining ratio.
pub const DEFAULT_MASK_RATIO: f64 = 0.5;

/// The five-phase curriculum at full length.
pub fn full_schedule(noise_sigma: [f64; 3]) -> Vec<PhaseSpec> {
    let phase = |name: &str, family, resolution, steps, lr_max, lr_min, mask_ratio, trainable| PhaseSpec {
        name: name.to_string(),
        dataset: DatasetSelector { family, resolution },
        steps,
        lr_max,
        lr_min,
        batch_size: 2,
        noise_sigma,
        mask_ratio,
        trainable,
    };
    use Family::*;
    use Resolution::*;
    vec![
        phase("masked_pretrain", Pretrain, Coarse, 150_000, 1e-4, 1e-7, DEFAULT_MASK_RATIO, Trainable::All),
        phase("decoder_pretrain", Pretrain, Coarse, 150_000, 1e-4, 1e-7, 0.0, Trainable::DecoderOnly),
        phase("fine_pretrain", Pretrain, Fine, 45_000, 1e-4, 1e-7, 0.0, Trainable::All),
        phase("coarse_fewshot", FewShot, Coarse, 20_000, 1e-5, 1e-8, 0.0, Trainable::All),
        phase("fine_fewshot", FewShot, Fine, 20_000, 1e-5, 1e-8, 0.0, Trainable::All),
    ]
}

/// The full curriculum with every step count divided by `scale` (rounded,
/// at least one) and every learning rate multiplied by `lr_scale`.
pub fn scaled_schedule(noise_sigma: [f64; 3], scale: f64, lr_scale: f64) -> Vec<PhaseSpec> {
    full_schedule(noise_sigma)
        .into_iter()
        .map(|mut p| {
            p.steps = ((p.steps as f64 / scale).round() as u64).max(1);
            p.lr_max *= lr_scale;
            p.lr_min *= lr_scale;
            p
        })
        .collect()
}
