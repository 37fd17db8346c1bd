use rand::Rng;

use crate::error::Result;
use crate::graph::Adjacency;
use crate::scalar::Scalar;
use crate::tensor::{
    grouped_attention, grouped_attention_backward, GatedMlp, GatedMlpCache, GroupScores, Linear, RmsNorm, Tensor2,
};

/// Groups head indices by mask identity, in order of first appearance.
fn group_heads<'a>(masks: &[&'a Adjacency]) -> Vec<(&'a Adjacency, Vec<usize>)> {
    let mut groups: Vec<(&Adjacency, Vec<usize>)> = Vec::new();
    for (h, &mask) in masks.iter().enumerate() {
        match groups.iter_mut().find(|(m, _)| std::ptr::eq(*m, mask)) {
            Some((_, heads)) => heads.push(h),
            None => groups.push((mask, vec![h])),
        }
    }
    groups
}

/// Post-norm transformer block over masked multi-head attention:
/// `Z' = norm(MMHA(Z) + Z)`, then `norm(MLP(Z') + Z')`.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub heads: usize,
    /// Fused query/key/value projection, `d -> 3d`, split per head.
    pub qkv: Linear<T>,
    pub out: Linear<T>,
    pub attn_norm: RmsNorm<T>,
    pub mlp: GatedMlp<T>,
    pub mlp_norm: RmsNorm<T>,
}

#[derive(Debug, Clone)]
pub struct BlockCache<T> {
    input: Tensor2<T>,
    qkv: Tensor2<T>,
    scores: Vec<GroupScores<T>>,
    attended: Tensor2<T>,
    attn_sum: Tensor2<T>,
    attn_inv: Vec<T>,
    mid: Tensor2<T>,
    mlp: GatedMlpCache<T>,
    mlp_sum: Tensor2<T>,
    mlp_inv: Vec<T>,
}

impl<T: Scalar> Block<T> {
    pub fn new(width: usize, heads: usize, expansion: usize, rng: &mut impl Rng) -> Self {
        Block {
            heads,
            qkv: Linear::new(width, 3 * width, rng),
            out: Linear::new(width, width, rng),
            attn_norm: RmsNorm::new(width),
            mlp: GatedMlp::new(width, expansion, rng),
            mlp_norm: RmsNorm::new(width),
        }
    }

    pub fn width(&self) -> usize {
        self.out.out_features()
    }

    fn head_width(&self) -> usize {
        self.width() / self.heads
    }

    /// Multi-head attention output (before the output projection). Heads that
    /// share a mask are evaluated together.
    fn attend(&self, qkv: &Tensor2<T>, masks: &[&Adjacency]) -> Result<(Tensor2<T>, Vec<GroupScores<T>>)> {
        let mut attended = Tensor2::zeros(qkv.rows(), self.width());
        let mut scores = Vec::new();
        for (mask, heads) in group_heads(masks) {
            scores.push(grouped_attention(qkv, self.head_width(), &heads, mask, &mut attended)?);
        }
        Ok((attended, scores))
    }

    /// `masks[h]` is the attention mask of head `h`.
    pub fn forward(&self, z: &Tensor2<T>, masks: &[&Adjacency]) -> Result<(Tensor2<T>, BlockCache<T>)> {
        assert_eq!(masks.len(), self.heads, "one mask per head");
        let qkv = self.qkv.forward(z)?;
        let (attended, scores) = self.attend(&qkv, masks)?;
        let attn_sum = self.out.forward(&attended)?.add(z)?;
        let (mid, attn_inv) = self.attn_norm.forward(&attn_sum)?;
        let (m, mlp) = self.mlp.forward(&mid)?;
        let mlp_sum = m.add(&mid)?;
        let (y, mlp_inv) = self.mlp_norm.forward(&mlp_sum)?;
        let cache = BlockCache {
            input: z.clone(),
            qkv,
            scores,
            attended,
            attn_sum,
            attn_inv,
            mid,
            mlp,
            mlp_sum,
            mlp_inv,
        };
        Ok((y, cache))
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, cache: &BlockCache<T>, masks: &[&Adjacency], dy: &Tensor2<T>) -> Result<Tensor2<T>> {
        let d = self.width();
        let d_mlp_sum = self.mlp_norm.backward(&cache.mlp_sum, &cache.mlp_inv, dy);
        let mut d_mid = self.mlp.backward(&cache.mid, &cache.mlp, &d_mlp_sum)?;
        d_mid.add_assign(&d_mlp_sum)?;
        let d_attn_sum = self.attn_norm.backward(&cache.attn_sum, &cache.attn_inv, &d_mid);
        let d_attended = self.out.backward(&cache.attended, &d_attn_sum)?;
        let mut d_qkv = Tensor2::zeros(cache.qkv.rows(), 3 * d);
        for ((mask, heads), scores) in group_heads(masks).into_iter().zip(&cache.scores) {
            assert_eq!(heads, scores.heads, "masks differ from the forward pass");
            grouped_attention_backward(&cache.qkv, self.head_width(), mask, scores, &d_attended, &mut d_qkv)?;
        }
        let mut dz = self.qkv.backward(&cache.input, &d_qkv)?;
        dz.add_assign(&d_attn_sum)?;
        Ok(dz)
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor2<T>)) {
        self.qkv.visit_params(&format!("{prefix}.qkv"), f);
        self.out.visit_params(&format!("{prefix}.out"), f);
        self.attn_norm.visit_params(&format!("{prefix}.attn_norm"), f);
        self.mlp.visit_params(&format!("{prefix}.mlp"), f);
        self.mlp_norm.visit_params(&format!("{prefix}.mlp_norm"), f);
    }

    pub fn visit_params_ref(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor2<T>)) {
        self.qkv.visit_params_ref(&format!("{prefix}.qkv"), f);
        self.out.visit_params_ref(&format!("{prefix}.out"), f);
        self.attn_norm.visit_params_ref(&format!("{prefix}.attn_norm"), f);
        self.mlp.visit_params_ref(&format!("{prefix}.mlp"), f);
        self.mlp_norm.visit_params_ref(&format!("{prefix}.mlp_norm"), f);
    }
}
