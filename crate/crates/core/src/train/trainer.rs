use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{partition, sample_neighbor_subgraph, AugmentedAdjacency};
use crate::model::{MaeMask, Model, ModelConfig, Trainable};
use crate::scalar::Scalar;
use crate::tensor::{ParamAccess, Tensor2};

use super::corpus::{Corpus, TrainingCase};
use super::norm::NormStats;
use super::optim::{cosine_lr, AdamW, AdamWConfig};
use super::schedule::PhaseSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub init: u64,
    pub augment: u64,
    pub train: u64,
}

impl Seeds {
    pub fn from_base(seed: u64) -> Self {
        Seeds { init: seed, augment: derive_seed(seed, &[1]), train: derive_seed(seed, &[2]) }
    }
}

/// Mixes `base` with a path of indices into an independent seed.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    path.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

/// Position in a multi-phase schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Progress {
    pub phase: usize,
    pub phase_step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub phase: String,
    pub lr: f64,
    pub loss: f64,
}

/// How a large graph is cut for one macro-step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubmeshStrategy {
    /// Connected parts of roughly equal size.
    Partition { parts: usize },
    /// A single subgraph spanned by uniformly sampled edges.
    NeighborSample { edge_budget: usize },
}

/// Augmented masks restricted to `nodes` (sorted global ids). Every node must
/// keep at least one neighbour in every mask.
pub fn restrict_augmented(aug: &AugmentedAdjacency, nodes: &[usize]) -> Result<AugmentedAdjacency> {
    let base_mask = aug.base_mask.induced(nodes);
    let dilated_mask = aug.dilated_mask.induced(nodes);
    if let Some(i) = base_mask.empty_rows().into_iter().chain(dilated_mask.empty_rows()).next() {
        return Err(Error::Graph(format!("node {} has no neighbour inside the subgraph", nodes[i])));
    }
    Ok(AugmentedAdjacency {
        base_mask,
        dilated_mask,
        head_assignment: aug.head_assignment.clone(),
        jumper_edges: Vec::new(),
        global_nodes: Vec::new(),
    })
}

/// Mean squared error over the rows flagged in `rows` and its gradient
/// scaled by `weight`.
fn masked_mse<T: Scalar>(pred: &Tensor2<T>, target: &Tensor2<T>, rows: &[usize], weight: f64) -> (f64, Tensor2<T>) {
    let mut dy = Tensor2::zeros(pred.rows(), pred.cols());
    let denom = (rows.len() * pred.cols()).max(1) as f64;
    let scale = T::of(2.0 * weight / denom);
    let mut sum = 0.0;
    for &i in rows {
        for j in 0..pred.cols() {
            let d = pred.get(i, j) - target.get(i, j);
            sum += d.as_f64() * d.as_f64();
            dy.set(i, j, scale * d);
        }
    }
    (sum / denom, dy)
}

/// Owns the model, its normalisation statistics and optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer<T: Scalar> {
    pub model: Model<T>,
    pub stats: NormStats,
    pub optimizer: AdamW<T>,
    pub seeds: Seeds,
    pub progress: Progress,
    pub log: Vec<LossRecord>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(config: ModelConfig, stats: NormStats, seeds: Seeds) -> Result<Self> {
        stats.validate()?;
        Ok(Trainer {
            model: Model::new(config, seeds.init)?,
            stats,
            optimizer: AdamW::new(AdamWConfig::default()),
            seeds,
            progress: Progress::default(),
            log: Vec::new(),
        })
    }

    /// Forward and backward pass on one sample; gradients accumulate with
    /// `weight`. Returns the loss over `loss_rows`.
    #[allow(clippy::too_many_arguments)]
    pub fn accumulate(
        &mut self,
        x: &Tensor2<T>,
        target: &Tensor2<T>,
        aug: &AugmentedAdjacency,
        mae: Option<&MaeMask>,
        loss_rows: &[usize],
        trainable: Trainable,
        weight: f64,
    ) -> Result<f64> {
        let (y, cache) = self.model.forward(x, aug, mae)?;
        let (loss, dy) = masked_mse(&y, target, loss_rows, weight);
        if !loss.is_finite() {
            return Ok(loss);
        }
        self.model.backward(&cache, aug, mae, &dy, trainable)?;
        Ok(loss)
    }

    /// Applies one optimizer update with the accumulated gradients.
    pub fn apply(&mut self, lr: f64, trainable: Trainable) {
        self.optimizer.step(&mut self.model, lr, &|name| trainable.includes(name));
    }

    /// Normalised input and target tensors for frame `k` of `tc`.
    fn tensors(&self, tc: &TrainingCase, k: usize, sigma: [f64; 3], seed: u64) -> (Tensor2<T>, Tensor2<T>) {
        let s = tc.sample(k, sigma, seed);
        (self.stats.normalize_inputs(&s.features.data), self.stats.normalize_outputs(&s.target))
    }

    /// Runs every phase from the current progress onwards. With `budget`,
    /// stops after that many optimizer steps; progress allows resuming.
    pub fn run_schedule(&mut self, phases: &[PhaseSpec], corpus: &Corpus, budget: Option<u64>) -> Result<()> {
        let mut remaining = budget.unwrap_or(u64::MAX);
        while self.progress.phase < phases.len() && remaining > 0 {
            let index = self.progress.phase;
            let phase = &phases[index];
            let cases = corpus.select(phase.dataset);
            let taken = self.run_phase_on(index, phase, corpus, &cases, remaining)?;
            remaining -= taken;
            if self.progress.phase_step >= phase.steps {
                self.progress = Progress { phase: index + 1, phase_step: 0 };
            }
        }
        Ok(())
    }

    /// Runs up to `max_steps` steps of `phase` on the listed corpus cases,
    /// continuing from `progress.phase_step`. Returns the steps taken.
    pub fn run_phase_on(
        &mut self,
        index: usize,
        phase: &PhaseSpec,
        corpus: &Corpus,
        cases: &[usize],
        max_steps: u64,
    ) -> Result<u64> {
        phase.validate()?;
        if cases.is_empty() {
            return Err(Error::Config(format!("phase {} selects no corpus cases", phase.name)));
        }
        let mut taken = 0;
        while self.progress.phase_step < phase.steps && taken < max_steps {
            let s = self.progress.phase_step;
            let lr = cosine_lr(s, phase.steps, phase.lr_max, phase.lr_min);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seeds.train, &[index as u64, s]));
            self.model.zero_grads();
            let mut loss = 0.0;
            for _ in 0..phase.batch_size {
                let tc = &corpus.cases[cases[rng.random_range(0..cases.len())]];
                let k = rng.random_range(0..tc.num_samples());
                let (noise_seed, mask_seed) = (rng.random::<u64>(), rng.random::<u64>());
                let (x, target) = self.tensors(tc, k, phase.noise_sigma, noise_seed);
                let mae = if phase.mask_ratio > 0.0 {
                    Some(MaeMask::new(&tc.aug, phase.mask_ratio, mask_seed)?)
                } else {
                    None
                };
                let w = 1.0 / phase.batch_size as f64;
                loss += w
                    * self.accumulate(&x, &target, &tc.aug, mae.as_ref(), tc.case.free_nodes(), phase.trainable, w)?;
            }
            let step = self.optimizer.step + 1;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss {loss} at step {step} (phase {}, phase step {s}, lr {lr:e}); last finite loss {}",
                    phase.name,
                    self.log.last().map_or("none".to_string(), |r| r.loss.to_string())
                )));
            }
            self.apply(lr, phase.trainable);
            if !self.model.all_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite parameters after step {step} (phase {}, lr {lr:e}, loss {loss})",
                    phase.name
                )));
            }
            self.log.push(LossRecord { step, phase: phase.name.clone(), lr, loss });
            self.progress.phase_step += 1;
            taken += 1;
        }
        Ok(taken)
    }

    /// One macro-step on frame `k` of a large case: the graph is cut into
    /// subgraphs and one optimizer update is applied per subgraph, in order.
    /// Returns the per-subgraph losses.
    #[allow(clippy::too_many_arguments)]
    pub fn submesh_gradient_step(
        &mut self,
        tc: &TrainingCase,
        k: usize,
        strategy: SubmeshStrategy,
        lr: f64,
        sigma: [f64; 3],
        trainable: Trainable,
        seed: u64,
    ) -> Result<Vec<f64>> {
        let parts = match strategy {
            SubmeshStrategy::Partition { parts } => partition(&tc.case.graph, parts)?,
            SubmeshStrategy::NeighborSample { edge_budget } => {
                vec![sample_neighbor_subgraph(&tc.case.graph, edge_budget, seed)?.nodes]
            }
        };
        let (x, target) = self.tensors(tc, k, sigma, derive_seed(seed, &[k as u64]));
        let mut is_free = vec![false; tc.case.num_nodes()];
        tc.case.free_nodes().iter().for_each(|&i| is_free[i] = true);
        let mut losses = Vec::with_capacity(parts.len());
        for nodes in &parts {
            let aug = restrict_augmented(&tc.aug, nodes)?;
            let rows: Vec<usize> = (0..nodes.len()).filter(|&l| is_free[nodes[l]]).collect();
            self.model.zero_grads();
            let loss = self.accumulate(
                &x.gather_rows(nodes),
                &target.gather_rows(nodes),
                &aug,
                None,
                &rows,
                trainable,
                1.0,
            )?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("non-finite loss on sub-mesh {}", losses.len())));
            }
            self.apply(lr, trainable);
            losses.push(loss);
        }
        Ok(losses)
    }

    /// Noise-free full-graph loss on frame `k` of `tc`.
    pub fn evaluate(&self, tc: &TrainingCase, k: usize) -> Result<f64> {
        let (x, target) = self.tensors(tc, k, [0.0; 3], 0);
        let y = self.model.predict(&x, &tc.aug)?;
        Ok(masked_mse(&y, &target, tc.case.free_nodes(), 1.0).0)
    }

    /// Loss log as CSV with header `step,phase,lr,loss`.
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("step,phase,lr,loss\n");
        for r in &self.log {
            out.push_str(&format!("{},{},{:e},{:e}\n", r.step, r.phase, r.lr, r.loss));
        }
        out
    }
}
