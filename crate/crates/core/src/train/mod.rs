//! Training: normalisation, noise injection, AdamW with cosine decay, the
//! multi-phase curriculum, sub-mesh stepping, checkpoints and the
//! compute-scaling harness.

mod checkpoint;
mod corpus;
mod desk;
mod noise;
mod norm;
mod optim;
mod scaling;
mod schedule;
mod trainer;

pub use checkpoint::{Checkpoint, CheckpointHeader, CHECKPOINT_MAGIC};
pub use desk::{desk_setup, DeskSetup, DeskSpec};
pub use corpus::{previous_frame, Corpus, Sample, TrainingCase};
pub use noise::add_noise;
pub use norm::{MomentAccumulator, NormStats};
pub use optim::{adamw_update, cosine_lr, AdamW, AdamWConfig};
pub use scaling::{fit_scaling_law, flops_estimate, isoflops_sweep, ScalingFit, SweepRecord, SweepReport, SweepSettings};
pub use schedule::{
    full_schedule, scaled_schedule, DatasetSelector, Family, PhaseSpec, Resolution, ALIGNED_NOISE,
    DEFAULT_MASK_RATIO, ISOTROPIC_NOISE,
};
pub use trainer::{derive_seed, restrict_augmented, LossRecord, Progress, SubmeshStrategy, Seeds, Trainer};
