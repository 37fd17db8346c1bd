use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::graph::{assemble, AugmentedAdjacency};
use crate::meshio::SyntheticCase;
use crate::model::{FeatureFrame, FlowCase, ModelConfig, NUM_FEATURES, NUM_OUTPUTS};
use crate::tensor::Tensor2;

use super::noise::add_noise;
use super::norm::{MomentAccumulator, NormStats};
use super::schedule::DatasetSelector;

/// The frame preceding `frames[k]`. For `k = 0` a closed cycle (last frame
/// equal to the first) wraps around; otherwise the first frame is repeated.
pub fn previous_frame(frames: &[Vec<Vec3>], k: usize) -> &[Vec3] {
    if k > 0 {
        return &frames[k - 1];
    }
    let n = frames.len();
    if n >= 3 && frames[n - 1] == frames[0] {
        &frames[n - 2]
    } else {
        &frames[0]
    }
}

/// One simulated case prepared for training: geometry, ground-truth frames
/// and the augmented attention masks for a given model configuration.
#[derive(Debug, Clone)]
pub struct TrainingCase {
    pub name: String,
    pub dataset: DatasetSelector,
    pub case: FlowCase,
    pub frames: Vec<Vec<Vec3>>,
    pub bulge_nodes: Vec<usize>,
    pub aug: AugmentedAdjacency,
}

/// Noisy input features and the matching raw target increments.
#[derive(Debug, Clone)]
pub struct Sample {
    pub features: FeatureFrame,
    pub target: Tensor2<f64>,
}

impl TrainingCase {
    pub fn new(
        name: impl Into<String>,
        dataset: DatasetSelector,
        case: FlowCase,
        frames: Vec<Vec<Vec3>>,
        bulge_nodes: Vec<usize>,
        config: &ModelConfig,
        aug_seed: u64,
    ) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::InvalidArgument("a training case needs at least two frames".into()));
        }
        if frames.iter().any(|f| f.len() != case.num_nodes()) {
            return Err(Error::Shape("frames do not cover every mesh node".into()));
        }
        let aug = assemble(&case.graph, &case.mesh, &config.augment_config(aug_seed), config.layers, config.heads)?;
        Ok(TrainingCase { name: name.into(), dataset, case, frames, bulge_nodes, aug })
    }

    pub fn from_synthetic(
        name: impl Into<String>,
        dataset: DatasetSelector,
        syn: SyntheticCase,
        config: &ModelConfig,
        aug_seed: u64,
    ) -> Result<Self> {
        let case = FlowCase::new(syn.mesh, syn.waveform, syn.trajectory.dt)?;
        let frames = case.frames(&syn.trajectory)?;
        Self::new(name, dataset, case, frames, syn.bulge_nodes, config, aug_seed)
    }

    /// Rebuilds the attention masks for another model configuration.
    pub fn reaugment(&mut self, config: &ModelConfig, aug_seed: u64) -> Result<()> {
        self.aug = assemble(
            &self.case.graph,
            &self.case.mesh,
            &config.augment_config(aug_seed),
            config.layers,
            config.heads,
        )?;
        Ok(())
    }

    /// Number of (input, target) pairs.
    pub fn num_samples(&self) -> usize {
        self.frames.len() - 1
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.case.dt
    }

    /// Noise-free features at frame `k` and the increment to frame `k + 1`.
    pub fn clean_sample(&self, k: usize) -> Sample {
        self.sample(k, [0.0; 3], 0)
    }

    /// Features at frame `k` with noise on velocity and acceleration; the
    /// target is the increment from the noisy velocity to frame `k + 1`.
    pub fn sample(&self, k: usize, sigma: [f64; 3], seed: u64) -> Sample {
        let clean = self.case.features(&self.frames[k], previous_frame(&self.frames, k), self.time(k));
        let features = add_noise(&clean, sigma, seed);
        let next = &self.frames[k + 1];
        let mut target = Tensor2::zeros(self.case.num_nodes(), NUM_OUTPUTS);
        for (i, u) in next.iter().enumerate() {
            let noisy = features.velocity(i);
            for c in 0..3 {
                target.set(i, c, u[c] - noisy[c]);
            }
        }
        Sample { features, target }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub cases: Vec<TrainingCase>,
}

impl Corpus {
    pub fn new(cases: Vec<TrainingCase>) -> Self {
        Corpus { cases }
    }

    /// Indices of the cases matching `selector`.
    pub fn select(&self, selector: DatasetSelector) -> Vec<usize> {
        (0..self.cases.len()).filter(|&i| self.cases[i].dataset == selector).collect()
    }

    pub fn reaugment(&mut self, config: &ModelConfig, aug_seed: u64) -> Result<()> {
        self.cases.iter_mut().try_for_each(|c| c.reaugment(config, aug_seed))
    }

    /// Normalisation statistics over every sample of every case, with the
    /// training noise `sigma` applied (seeded per sample) so that components
    /// that are constant in clean data are scaled to the noise they carry.
    pub fn fit_norm_stats(&self, sigma: [f64; 3]) -> Result<NormStats> {
        if self.cases.is_empty() {
            return Err(Error::InvalidArgument("cannot fit statistics on an empty corpus".into()));
        }
        let mut inputs = MomentAccumulator::new(NUM_FEATURES);
        let mut outputs = MomentAccumulator::new(NUM_OUTPUTS);
        for (ci, c) in self.cases.iter().enumerate() {
            for k in 0..c.num_samples() {
                let s = c.sample(k, sigma, ((ci as u64) << 32) | k as u64);
                inputs.push_rows(&s.features.data);
                outputs.push_rows(&s.target);
            }
        }
        let (input_mean, input_std) = inputs.finish();
        let (output_mean, output_std) = outputs.finish();
        Ok(NormStats { input_mean, input_std, output_mean, output_std })
    }
}
