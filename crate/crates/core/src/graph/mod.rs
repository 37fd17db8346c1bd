//! Mesh graph construction, augmented attention masks, node masking and
//! sub-mesh extraction.

mod adjacency;
mod mask;
mod partition;

pub use adjacency::{
    add_global_attention, add_random_jumpers, build_adjacency, connect_globally, dilate,
    select_global_nodes, Adjacency,
};
pub use mask::{mask_nodes, MaskedGraph};
pub use partition::{partition, sample_neighbor_subgraph, SampledSubgraph};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meshio::Mesh;

/// Which graph the dilated mask is squared from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DilationSource {
    /// Square the fully augmented base mask (jumpers and global rows included).
    AugmentedBase,
    /// Square the mesh graph plus jumpers, then add the global rows. Squaring
    /// a mask with global nodes yields a complete graph, so this keeps the
    /// dilated heads local.
    MeshWithJumpers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub jumper_fraction: f64,
    pub global_fraction: f64,
    /// Number of trailing layers whose second half of heads attends over the
    /// dilated mask.
    pub dilated_layers: usize,
    pub dilation_source: DilationSource,
    pub strict_a2: bool,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            jumper_fraction: 0.2,
            global_fraction: 0.05,
            dilated_layers: 5,
            dilation_source: DilationSource::AugmentedBase,
            strict_a2: false,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// No jumpers, no global nodes, no dilation.
    pub fn plain() -> Self {
        AugmentConfig {
            jumper_fraction: 0.0,
            global_fraction: 0.0,
            dilated_layers: 0,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadMask {
    Base,
    Dilated,
}

#[derive(Debug, Clone)]
pub struct AugmentedAdjacency {
    pub base_mask: Adjacency,
    pub dilated_mask: Adjacency,
    /// `head_assignment[layer][head]`.
    pub head_assignment: Vec<Vec<HeadMask>>,
    pub jumper_edges: Vec<(usize, usize)>,
    pub global_nodes: Vec<usize>,
}

impl AugmentedAdjacency {
    pub fn mask(&self, kind: HeadMask) -> &Adjacency {
        match kind {
            HeadMask::Base => &self.base_mask,
            HeadMask::Dilated => &self.dilated_mask,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.base_mask.num_nodes()
    }

    /// Identifies both masks, for determinism checks.
    pub fn content_hash(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.base_mask.content_hash());
        h.update(self.dilated_mask.content_hash());
        h.finalize().into()
    }
}

/// Head-to-mask table: base everywhere except the trailing `dilated_layers`
/// layers, where the upper half of the heads use the dilated mask.
pub fn head_assignment(layers: usize, heads: usize, dilated_layers: usize) -> Vec<Vec<HeadMask>> {
    (0..layers)
        .map(|l| {
            (0..heads)
                .map(|h| {
                    if l + dilated_layers >= layers && h >= heads - heads / 2 {
                        HeadMask::Dilated
                    } else {
                        HeadMask::Base
                    }
                })
                .collect()
        })
        .collect()
}

/// Composes jumpers, global attention and dilation on top of the mesh graph.
pub fn assemble(
    adjacency: &Adjacency,
    mesh: &Mesh,
    config: &AugmentConfig,
    layers: usize,
    heads: usize,
) -> Result<AugmentedAdjacency> {
    if config.dilated_layers > layers {
        return Err(Error::InvalidArgument(format!(
            "{} dilated layers requested but the model has {layers}",
            config.dilated_layers
        )));
    }
    if heads == 0 {
        return Err(Error::InvalidArgument("at least one head is required".into()));
    }
    let (with_jumpers, jumper_edges) =
        add_random_jumpers(adjacency, config.jumper_fraction, config.seed)?;
    let (base_mask, global_nodes) =
        add_global_attention(&with_jumpers, mesh, config.global_fraction)?;
    let head_assignment = head_assignment(layers, heads, config.dilated_layers);
    let uses_dilated = head_assignment.iter().flatten().any(|&h| h == HeadMask::Dilated);
    let dilated_mask = if !uses_dilated {
        base_mask.clone()
    } else {
        match config.dilation_source {
            DilationSource::AugmentedBase => dilate(&base_mask, config.strict_a2),
            DilationSource::MeshWithJumpers => {
                connect_globally(&dilate(&with_jumpers, config.strict_a2), &global_nodes)
            }
        }
    };
    Ok(AugmentedAdjacency {
        base_mask,
        dilated_mask,
        head_assignment,
        jumper_edges,
        global_nodes,
    })
}
