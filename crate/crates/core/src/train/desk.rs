use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::meshio::{generate_synthetic_case, FlowSpec, GeometrySpec, RecirculationParams};
use crate::model::ModelConfig;

use super::corpus::{Corpus, TrainingCase};
use super::schedule::{DatasetSelector, Family, Resolution};

/// Shape of the synthetic desk-scale corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeskSpec {
    /// Randomised tube-with-bulge geometries in the pretraining family.
    pub pretrain_geometries: usize,
    /// Training waveforms on the target geometry.
    pub fewshot_waveforms: usize,
    pub coarse_edge_length: f64,
    pub fine_edge_length: f64,
    /// Target geometry; also the evaluation geometry.
    pub target: GeometrySpec,
    /// Flow of the held-out evaluation case.
    pub eval_flow: FlowSpec,
    pub seed: u64,
}

impl Default for DeskSpec {
    fn default() -> Self {
        DeskSpec {
            pretrain_geometries: 4,
            fewshot_waveforms: 2,
            coarse_edge_length: 0.5,
            fine_edge_length: GeometrySpec::default().target_edge_length,
            target: GeometrySpec::default(),
            eval_flow: FlowSpec::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeskSetup {
    pub corpus: Corpus,
    /// Fine-resolution target geometry with a waveform not seen in training.
    pub eval: TrainingCase,
}

/// Builds the corpus: each pretraining geometry and each few-shot waveform
/// at both resolutions, plus the held-out evaluation case.
pub fn desk_setup(config: &ModelConfig, spec: &DeskSpec, aug_seed: u64) -> Result<DeskSetup> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut cases = Vec::new();
    let resolutions = [(Resolution::Coarse, spec.coarse_edge_length), (Resolution::Fine, spec.fine_edge_length)];
    let mut add = |name: String, family, geom: &GeometrySpec, flow: &FlowSpec| -> Result<()> {
        for (resolution, h) in resolutions {
            let g = GeometrySpec { target_edge_length: h, ..geom.clone() };
            let syn = generate_synthetic_case(&g, flow)?;
            let dataset = DatasetSelector { family, resolution };
            let tag = match resolution {
                Resolution::Coarse => "coarse",
                Resolution::Fine => "fine",
            };
            cases.push(TrainingCase::from_synthetic(format!("{name}_{tag}"), dataset, syn, config, aug_seed)?);
        }
        Ok(())
    };
    for i in 0..spec.pretrain_geometries {
        let geom = GeometrySpec {
            bulge_radius: rng.random_range(2.0..3.0),
            bulge_offset: rng.random_range(1.5..2.4),
            ..spec.target.clone()
        };
        let flow = FlowSpec {
            recirculation: RecirculationParams {
                strength: rng.random_range(1.0..2.0),
                ..spec.eval_flow.recirculation.clone()
            },
            seed: rng.random(),
            ..spec.eval_flow.clone()
        };
        add(format!("pretrain{i}"), Family::Pretrain, &geom, &flow)?;
    }
    for i in 0..spec.fewshot_waveforms {
        let flow = FlowSpec { seed: spec.eval_flow.seed.wrapping_add(1 + i as u64), ..spec.eval_flow.clone() };
        add(format!("fewshot{i}"), Family::FewShot, &spec.target, &flow)?;
    }
    let target = GeometrySpec { target_edge_length: spec.fine_edge_length, ..spec.target.clone() };
    let eval = TrainingCase::from_synthetic(
        "eval",
        DatasetSelector { family: Family::FewShot, resolution: Resolution::Fine },
        generate_synthetic_case(&target, &spec.eval_flow)?,
        config,
        aug_seed,
    )?;
    Ok(DeskSetup { corpus: Corpus::new(cases), eval })
}
