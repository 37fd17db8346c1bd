//! Encode-process-decode graph transformer.
//!
//! Node features are embedded by a two-layer MLP, refined by a stack of
//! post-norm attention blocks whose heads attend over the augmented
//! adjacency masks, optionally passed through a short stack of extra blocks
//! that fill masked nodes with a learned token (masked-autoencoder
//! pretraining), and read out per node as a velocity increment.

mod block;
mod features;

pub use block::{Block, BlockCache};
pub use features::{col, FeatureFrame, FlowCase, NUM_FEATURES, NUM_OUTPUTS};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::graph::{mask_nodes, Adjacency, AugmentConfig, AugmentedAdjacency, DilationSource, MaskedGraph};
use crate::scalar::Scalar;
use crate::tensor::{relu, relu_backward, Linear, ParamAccess, RmsNorm, Tensor2};
use crate::train::NormStats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    pub expansion: usize,
    pub in_features: usize,
    pub out_features: usize,
    /// Trailing layers whose upper half of heads use the dilated mask.
    pub dilated_layers: usize,
    pub jumper_fraction: f64,
    pub global_fraction: f64,
    pub dilation_source: DilationSource,
    pub strict_a2: bool,
    /// Learned token for masked nodes.
    pub masked_token: bool,
    /// Blocks in the masked-autoencoder stack that runs on the full graph.
    pub decoder_layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl ModelConfig {
    /// Full-size architecture: 15 layers of width 512.
    pub fn full() -> Self {
        ModelConfig {
            layers: 15,
            width: 512,
            heads: 8,
            expansion: 3,
            in_features: NUM_FEATURES,
            out_features: NUM_OUTPUTS,
            dilated_layers: 5,
            jumper_fraction: 0.2,
            global_fraction: 0.05,
            dilation_source: DilationSource::AugmentedBase,
            strict_a2: false,
            masked_token: true,
            decoder_layers: 3,
        }
    }

    /// Desk-scale architecture: 4 layers of width 64.
    pub fn toy() -> Self {
        ModelConfig {
            layers: 4,
            width: 64,
            dilated_layers: 2,
            dilation_source: DilationSource::MeshWithJumpers,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return fail(format!("width {} must be a positive multiple of heads {}", self.width, self.heads));
        }
        if self.expansion == 0 || self.in_features == 0 || self.out_features == 0 {
            return fail("expansion and feature counts must be positive".into());
        }
        if self.dilated_layers > self.layers {
            return fail(format!("{} dilated layers exceed {} layers", self.dilated_layers, self.layers));
        }
        if !(0.0..1.0).contains(&self.jumper_fraction) || !(0.0..=1.0).contains(&self.global_fraction) {
            return fail("augmentation fractions out of range".into());
        }
        Ok(())
    }

    pub fn augment_config(&self, seed: u64) -> AugmentConfig {
        AugmentConfig {
            jumper_fraction: self.jumper_fraction,
            global_fraction: self.global_fraction,
            dilated_layers: self.dilated_layers,
            dilation_source: self.dilation_source,
            strict_a2: self.strict_a2,
            seed,
        }
    }

    fn block_params(&self) -> u64 {
        let d = self.width as u64;
        let ed = self.expansion as u64 * d;
        let attention = d * 3 * d + 3 * d + d * d + d;
        let mlp = 2 * (d * ed + ed) + ed * d + d;
        attention + mlp + 2 * d
    }
}

/// Trainable parameters of the encoder, the `L` blocks, the readout and the
/// masked token. The masked-autoencoder stack is counted by
/// [`mae_param_count`].
pub fn param_count(config: &ModelConfig) -> u64 {
    let d = config.width as u64;
    let (p, q) = (config.in_features as u64, config.out_features as u64);
    let encoder = p * d + d + d * d + d + d;
    let decoder = d * d + d + d + d * q + q;
    let token = if config.masked_token { d } else { 0 };
    encoder + config.layers as u64 * config.block_params() + decoder + token
}

pub fn mae_param_count(config: &ModelConfig) -> u64 {
    config.decoder_layers as u64 * config.block_params()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub encoder_in: Linear<T>,
    pub encoder_out: Linear<T>,
    pub encoder_norm: RmsNorm<T>,
    pub blocks: Vec<Block<T>>,
    pub mae_blocks: Vec<Block<T>>,
    pub decoder_hidden: Linear<T>,
    pub decoder_norm: RmsNorm<T>,
    pub decoder_out: Linear<T>,
    pub masked_token: Tensor2<T>,
}

/// Which parameters receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trainable {
    All,
    /// Masked-autoencoder stack, readout and masked token only.
    DecoderOnly,
}

impl Trainable {
    /// Whether the named parameter is updated.
    pub fn includes(self, name: &str) -> bool {
        match self {
            Trainable::All => true,
            Trainable::DecoderOnly => {
                name.starts_with("mae.") || name.starts_with("decoder.") || name == "masked_token"
            }
        }
    }
}

/// Node masking for one masked-autoencoder pass.
#[derive(Debug, Clone)]
pub struct MaeMask {
    pub masked: MaskedGraph,
    /// Augmented masks restricted to the visible nodes.
    pub visible: AugmentedAdjacency,
}

impl MaeMask {
    pub fn new(aug: &AugmentedAdjacency, ratio: f64, seed: u64) -> Result<Self> {
        let masked = mask_nodes(&aug.base_mask, ratio, seed)?;
        let visible = AugmentedAdjacency {
            base_mask: masked.restrict(&aug.base_mask),
            dilated_mask: masked.restrict(&aug.dilated_mask),
            head_assignment: aug.head_assignment.clone(),
            jumper_edges: Vec::new(),
            global_nodes: Vec::new(),
        };
        Ok(MaeMask { masked, visible })
    }
}

#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    input: Tensor2<T>,
    enc_pre: Tensor2<T>,
    enc_act: Tensor2<T>,
    enc_sum: Tensor2<T>,
    enc_inv: Vec<T>,
    blocks: Vec<BlockCache<T>>,
    mae_blocks: Vec<BlockCache<T>>,
    readout_input: Tensor2<T>,
    dec_pre: Tensor2<T>,
    dec_act: Tensor2<T>,
    dec_inv: Vec<T>,
    dec_normed: Tensor2<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ModelParams<T>,
}

fn layer_masks(aug: &AugmentedAdjacency, layer: usize) -> Vec<&Adjacency> {
    aug.head_assignment[layer].iter().map(|&h| aug.mask(h)).collect()
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, e) = (config.width, config.expansion);
        let params = ModelParams {
            encoder_in: Linear::new(config.in_features, d, &mut rng),
            encoder_out: Linear::new(d, d, &mut rng),
            encoder_norm: RmsNorm::new(d),
            blocks: (0..config.layers).map(|_| Block::new(d, config.heads, e, &mut rng)).collect(),
            mae_blocks: (0..config.decoder_layers).map(|_| Block::new(d, config.heads, e, &mut rng)).collect(),
            decoder_hidden: Linear::new(d, d, &mut rng),
            decoder_norm: RmsNorm::new(d),
            decoder_out: Linear::new(d, config.out_features, &mut rng),
            masked_token: Tensor2::uniform(1, if config.masked_token { d } else { 0 }, 1.0, &mut rng).into_param(),
        };
        Ok(Model { config, params })
    }

    /// Every weight and bias set to zero (gains stay at one).
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        let mut m = Self::new(config, 0)?;
        m.visit_params(&mut |name, p| {
            if !name.ends_with(".gain") {
                p.data_mut().iter_mut().for_each(|v| *v = T::zero());
            }
        });
        Ok(m)
    }

    /// Checks that masks fit the configured depth and heads.
    fn check_masks(&self, aug: &AugmentedAdjacency) -> Result<()> {
        if aug.head_assignment.len() != self.config.layers
            || aug.head_assignment.iter().any(|r| r.len() != self.config.heads)
        {
            return Err(Error::Shape(format!(
                "masks assigned for {} layers, model has {} layers of {} heads",
                aug.head_assignment.len(),
                self.config.layers,
                self.config.heads
            )));
        }
        Ok(())
    }

    /// Per-node outputs (normalised increments) for normalised features `x`.
    ///
    /// With `mae`, the encoder and the `L` blocks only see the visible
    /// nodes; hidden nodes re-enter as the masked token before the extra
    /// block stack, which runs on the full base mask.
    pub fn forward(
        &self,
        x: &Tensor2<T>,
        aug: &AugmentedAdjacency,
        mae: Option<&MaeMask>,
    ) -> Result<(Tensor2<T>, ForwardCache<T>)> {
        self.check_masks(aug)?;
        let p = &self.params;
        let n = aug.num_nodes();
        if x.rows() != n || x.cols() != self.config.in_features {
            return Err(Error::Shape(format!(
                "features are {:?}, expected {n}x{}",
                x.shape(),
                self.config.in_features
            )));
        }
        let input = match mae {
            Some(m) => x.gather_rows(&m.masked.visible_nodes),
            None => x.clone(),
        };
        let enc_pre = p.encoder_in.forward(&input)?;
        let enc_act = relu(&enc_pre);
        let enc_sum = p.encoder_out.forward(&enc_act)?;
        let (mut z, enc_inv) = p.encoder_norm.forward(&enc_sum)?;
        let inner = mae.map_or(aug, |m| &m.visible);
        let mut blocks = Vec::with_capacity(p.blocks.len());
        for (l, b) in p.blocks.iter().enumerate() {
            let (next, c) = b.forward(&z, &layer_masks(inner, l))?;
            blocks.push(c);
            z = next;
        }
        if let Some(m) = mae {
            if !m.masked.hidden.is_empty() && !self.config.masked_token {
                return Err(Error::Config("masking requires the masked token".into()));
            }
            let mut full = Tensor2::zeros(n, self.config.width);
            for (l, &g) in m.masked.visible_nodes.iter().enumerate() {
                full.row_mut(g).copy_from_slice(z.row(l));
            }
            for &h in &m.masked.hidden {
                full.row_mut(h).copy_from_slice(p.masked_token.data());
            }
            z = full;
        }
        let base: Vec<&Adjacency> = vec![&aug.base_mask; self.config.heads];
        let mut mae_blocks = Vec::with_capacity(p.mae_blocks.len());
        for b in &p.mae_blocks {
            let (next, c) = b.forward(&z, &base)?;
            mae_blocks.push(c);
            z = next;
        }
        let dec_pre = p.decoder_hidden.forward(&z)?;
        let readout_input = z;
        let dec_act = relu(&dec_pre);
        let (dec_normed, dec_inv) = p.decoder_norm.forward(&dec_act)?;
        let y = p.decoder_out.forward(&dec_normed)?;
        let cache = ForwardCache {
            input,
            enc_pre,
            enc_act,
            enc_sum,
            enc_inv,
            blocks,
            mae_blocks,
            readout_input,
            dec_pre,
            dec_act,
            dec_inv,
            dec_normed,
        };
        Ok((y, cache))
    }

    /// Accumulates gradients of a loss with output gradient `dy`.
    pub fn backward(
        &mut self,
        cache: &ForwardCache<T>,
        aug: &AugmentedAdjacency,
        mae: Option<&MaeMask>,
        dy: &Tensor2<T>,
        trainable: Trainable,
    ) -> Result<()> {
        let heads = self.config.heads;
        let p = &mut self.params;
        let d_normed = p.decoder_out.backward(&cache.dec_normed, dy)?;
        let d_act = p.decoder_norm.backward(&cache.dec_act, &cache.dec_inv, &d_normed);
        let mut dz = p.decoder_hidden.backward(&cache.readout_input, &relu_backward(&cache.dec_pre, &d_act))?;
        let base: Vec<&Adjacency> = vec![&aug.base_mask; heads];
        for (b, c) in p.mae_blocks.iter_mut().zip(&cache.mae_blocks).rev() {
            dz = b.backward(c, &base, &dz)?;
        }
        if let Some(m) = mae {
            let mut token_grad = vec![T::zero(); p.masked_token.len()];
            for &h in &m.masked.hidden {
                for (g, &v) in token_grad.iter_mut().zip(dz.row(h)) {
                    *g += v;
                }
            }
            if !token_grad.is_empty() {
                p.masked_token.accumulate_grad(&token_grad);
            }
            dz = dz.gather_rows(&m.masked.visible_nodes);
        }
        if trainable == Trainable::DecoderOnly {
            return Ok(());
        }
        let inner = mae.map_or(aug, |m| &m.visible);
        for (l, (b, c)) in p.blocks.iter_mut().zip(&cache.blocks).enumerate().rev() {
            dz = b.backward(c, &layer_masks(inner, l), &dz)?;
        }
        let d_sum = p.encoder_norm.backward(&cache.enc_sum, &cache.enc_inv, &dz);
        let d_act = p.encoder_out.backward(&cache.enc_act, &d_sum)?;
        p.encoder_in.backward(&cache.input, &relu_backward(&cache.enc_pre, &d_act))?;
        Ok(())
    }

    /// Forward pass without keeping intermediates for the caller.
    pub fn predict(&self, x: &Tensor2<T>, aug: &AugmentedAdjacency) -> Result<Tensor2<T>> {
        Ok(self.forward(x, aug, None)?.0)
    }

    /// Trainable parameters excluding the masked-autoencoder stack.
    pub fn core_param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params_ref(&mut |name, p| {
            if !name.starts_with("mae.") {
                n += p.len();
            }
        });
        n
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let mut out = Model::<U>::new(self.config.clone(), 0).expect("config already validated");
        let mut src = Vec::new();
        self.visit_params_ref(&mut |_, p| src.push(p.cast::<U>()));
        let mut it = src.into_iter();
        out.visit_params(&mut |_, p| *p = it.next().expect("same layout"));
        out
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit_params_ref(&mut |_, p| ok &= p.all_finite());
        ok
    }
}

impl<T: Scalar> ParamAccess<T> for Model<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Tensor2<T>)) {
        let p = &mut self.params;
        p.encoder_in.visit_params("encoder.in", f);
        p.encoder_out.visit_params("encoder.out", f);
        p.encoder_norm.visit_params("encoder.norm", f);
        for (i, b) in p.blocks.iter_mut().enumerate() {
            b.visit_params(&format!("blocks.{i}"), f);
        }
        for (i, b) in p.mae_blocks.iter_mut().enumerate() {
            b.visit_params(&format!("mae.{i}"), f);
        }
        p.decoder_hidden.visit_params("decoder.hidden", f);
        p.decoder_norm.visit_params("decoder.norm", f);
        p.decoder_out.visit_params("decoder.out", f);
        f("masked_token", &mut p.masked_token);
    }

    fn visit_params_ref(&self, f: &mut dyn FnMut(&str, &Tensor2<T>)) {
        let p = &self.params;
        p.encoder_in.visit_params_ref("encoder.in", f);
        p.encoder_out.visit_params_ref("encoder.out", f);
        p.encoder_norm.visit_params_ref("encoder.norm", f);
        for (i, b) in p.blocks.iter().enumerate() {
            b.visit_params_ref(&format!("blocks.{i}"), f);
        }
        for (i, b) in p.mae_blocks.iter().enumerate() {
            b.visit_params_ref(&format!("mae.{i}"), f);
        }
        p.decoder_hidden.visit_params_ref("decoder.hidden", f);
        p.decoder_norm.visit_params_ref("decoder.norm", f);
        p.decoder_out.visit_params_ref("decoder.out", f);
        f("masked_token", &p.masked_token);
    }
}

/// One autoregressive step: predict the increment, add it to `u_t` and
/// enforce the boundary conditions at `t + dt`.
#[allow(clippy::too_many_arguments)]
pub fn forward_step<T: Scalar>(
    model: &Model<T>,
    stats: &NormStats,
    case: &FlowCase,
    aug: &AugmentedAdjacency,
    u_t: &[Vec3],
    u_prev: &[Vec3],
    t: f64,
    t_next: f64,
) -> Result<Vec<Vec3>> {
    let frame = case.features(u_t, u_prev, t);
    let x = stats.normalize_inputs::<T>(&frame.data);
    let y = model.predict(&x, aug)?;
    let inc = stats.denormalize_outputs(&y);
    let mut next: Vec<Vec3> = (0..case.num_nodes())
        .map(|i| {
            let r = inc.row(i);
            [u_t[i][0] + r[0], u_t[i][1] + r[1], u_t[i][2] + r[2]]
        })
        .collect();
    case.enforce_boundaries(&mut next, t_next);
    Ok(next)
}
