//! Attention stacks: plain multi-head self-attention, pre-norm transformer
//! blocks, butterfly block attention over folded token groups, token-parallel
//! attention with the algebraic removal of the output projection, and a
//! compact ViT wiring either attention flavor to image patches.
//!
//! Butterfly attention never materializes an S x S score matrix. Each layer
//! folds the sequence so that tokens `stride` apart form contiguous groups of
//! `a`, runs an ordinary transformer block on the folded batch, and unfolds.
//! Scores therefore cost `S * a * D` MACs per layer instead of `S^2 * D`.

use crate::block_mlp::DenseMlp;
use crate::butterfly::ButterflySchedule;
use crate::error::{Error, Result};
use crate::mixing::{CostAccounted, ModuleCost};
use crate::patch_mixer::extract_patches;
use crate::rng::DetRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use alloc::vec::Vec;
use core::cell::Cell;

/// Bias magnitude standing in for -inf when masking scores. Large enough
/// that exp underflows to zero after max subtraction, small enough to stay
/// finite in f32.
const MASK_BIAS: f64 = 1e30;

/// Attention masking input. `Tokens` is a per-token keep flag `[B, S]`
/// (1 attend, 0 hide) applied to keys; `Scores` is a binary mask already
/// broadcastable to the score tensor `[B', heads, n, n]`.
pub enum AttentionMask<T: Scalar> {
    Tokens(Tensor<T>),
    Scores(Tensor<T>),
}

/// Whether a token mask follows the tokens through the butterfly fold
/// (default) or is refolded contiguously, masking positions instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskMode {
    #[default]
    Permuted,
    Unpermuted,
}

fn mask_to_bias<T: Scalar>(mask: &Tensor<T>) -> Result<Tensor<T>> {
    let ones = Tensor::ones(&mask.shape());
    Ok(mask.sub(&ones)?.scale(T::from_f64(MASK_BIAS)))
}

/// Softmax attention over already-split heads: `q, k, v` are
/// `[B', h, n, d]`; `mask`, when given, is binary and broadcastable to the
/// `[B', h, n, n]` scores. Masked keys receive a large negative bias before
/// the softmax.
pub fn scaled_dot_attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    mask: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let qs = q.shape();
    if qs.len() != 4 {
        return Err(Error::ShapeMismatch { op: "attention", left: qs, right: k.shape() });
    }
    let d = qs[3];
    let kt = k.permute_axes(&[0, 1, 3, 2])?;
    let mut scores = q
        .batched_matmul_counted(&kt, true)?
        .scale(T::from_f64(1.0 / (d as f64).sqrt()));
    if let Some(m) = mask {
        scores = scores.add(&mask_to_bias(m)?)?;
    }
    scores.softmax(3)?.batched_matmul(v)
}

/// Full multi-head attention over `x: [b, n, d]` with square projections.
/// `wout` is optional so callers can fold it into `wv` beforehand.
pub fn mhsa<T: Scalar>(
    x: &Tensor<T>,
    wq: &Tensor<T>,
    wk: &Tensor<T>,
    wv: &Tensor<T>,
    wout: Option<&Tensor<T>>,
    heads: usize,
    mask: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 3 {
        return Err(Error::ShapeMismatch { op: "mhsa", left: s, right: wq.shape() });
    }
    let (b, n, d) = (s[0], s[1], s[2]);
    if d % heads != 0 {
        return Err(Error::Schedule(format!("width {d} is not divisible into {heads} heads")));
    }
    let dh = d / heads;
    let flat = x.reshape(&[b * n, d])?;
    let split = |w: &Tensor<T>| -> Result<Tensor<T>> {
        flat.matmul(w)?
            .reshape(&[b, n, heads, dh])?
            .permute_axes(&[0, 2, 1, 3])
    };
    let ctx = scaled_dot_attention(&split(wq)?, &split(wk)?, &split(wv)?, mask)?
        .permute_axes(&[0, 2, 1, 3])?
        .reshape(&[b * n, d])?;
    let out = match wout {
        Some(w) => ctx.matmul(w)?,
        None => ctx,
    };
    out.reshape(&[b, n, d])
}

/// Pre-norm residual transformer block: `x + MHSA(LN(x))`, then
/// `+ MLP(LN(.))`. Projections are bias-free `[D, D]`; the MLP is
/// `D -> expansion*D -> D` with GELU.
pub struct TransformerBlock<T: Scalar> {
    wq: Tensor<T>,
    wk: Tensor<T>,
    wv: Tensor<T>,
    wout: Tensor<T>,
    heads: usize,
    mlp: DenseMlp<T>,
    ln1_gain: Tensor<T>,
    ln1_bias: Tensor<T>,
    ln2_gain: Tensor<T>,
    ln2_bias: Tensor<T>,
}

impl<T: Scalar> TransformerBlock<T> {
    pub fn new(dim: usize, heads: usize, expansion: usize, rng: &mut DetRng) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Schedule(format!("width {dim} is not divisible into {heads} heads")));
        }
        let bound = 1.0 / (dim as f64).sqrt();
        let mut proj = || Tensor::uniform(&[dim, dim], -bound, bound, rng).with_grad();
        let (wq, wk, wv, wout) = (proj(), proj(), proj(), proj());
        Ok(Self {
            wq,
            wk,
            wv,
            wout,
            heads,
            mlp: DenseMlp::new(&[dim, expansion * dim, dim], rng),
            ln1_gain: Tensor::ones(&[dim]).with_grad(),
            ln1_bias: Tensor::zeros(&[dim]).with_grad(),
            ln2_gain: Tensor::ones(&[dim]).with_grad(),
            ln2_bias: Tensor::zeros(&[dim]).with_grad(),
        })
    }

    pub fn dim(&self) -> usize {
        self.wq.shape()[0]
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    /// `x: [b, n, D]`; a `Tokens` mask must be `[b, n]`.
    pub fn forward(&self, x: &Tensor<T>, mask: Option<&AttentionMask<T>>) -> Result<Tensor<T>> {
        let s = x.shape();
        let score_mask = match mask {
            None => None,
            Some(AttentionMask::Scores(m)) => Some(m.clone()),
            Some(AttentionMask::Tokens(m)) => {
                // keys are masked per token: broadcast [b, n] over queries
                Some(m.reshape(&[s[0], 1, 1, s[1]])?)
            }
        };
        let normed = x.layer_norm(&self.ln1_gain, &self.ln1_bias, 2)?;
        let attn = mhsa(
            &normed,
            &self.wq,
            &self.wk,
            &self.wv,
            Some(&self.wout),
            self.heads,
            score_mask.as_ref(),
        )?;
        let h = x.add(&attn)?;
        let normed = h.layer_norm(&self.ln2_gain, &self.ln2_bias, 2)?;
        let flat = normed.reshape(&[s[0] * s[1], s[2]])?;
        let mixed = self.mlp.forward(&flat)?.reshape(&s)?;
        h.add(&mixed)
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        let mut out = vec![
            self.wq.clone(),
            self.wk.clone(),
            self.wv.clone(),
            self.wout.clone(),
            self.ln1_gain.clone(),
            self.ln1_bias.clone(),
            self.ln2_gain.clone(),
            self.ln2_bias.clone(),
        ];
        out.extend(self.mlp.params());
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(Tensor::len).sum()
    }

    #[cfg(test)]
    pub(crate) fn zero_out_for_identity(&self) {
        let d = self.dim();
        self.wout.set_data(&vec![T::ZERO; d * d]).unwrap();
        let w2 = &self.mlp.weights()[1];
        w2.set_data(&vec![T::ZERO; w2.len()]).unwrap();
        let b2 = &self.mlp.biases()[1];
        b2.set_data(&vec![T::ZERO; b2.len()]).unwrap();
    }
}

/// Transformer blocks applied to butterfly-folded token groups. Block `i`
/// uses the schedule stride `i mod L`, so a stack deeper than the schedule
/// keeps cycling through the strides. Each fold and unfold counts as one
/// permutation pass.
pub struct ButterflyAttention<T: Scalar> {
    schedule: ButterflySchedule,
    blocks: Vec<TransformerBlock<T>>,
    mask_mode: MaskMode,
    permutations: Cell<u64>,
}

impl<T: Scalar> ButterflyAttention<T> {
    pub fn new(
        schedule: ButterflySchedule,
        depth: usize,
        dim: usize,
        heads: usize,
        expansion: usize,
        rng: &mut DetRng,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::Schedule("depth must be positive".into()));
        }
        let blocks = (0..depth)
            .map(|_| TransformerBlock::new(dim, heads, expansion, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { schedule, blocks, mask_mode: MaskMode::default(), permutations: Cell::new(0) })
    }

    pub fn with_mask_mode(mut self, mode: MaskMode) -> Self {
        self.mask_mode = mode;
        self
    }

    pub fn schedule(&self) -> &ButterflySchedule {
        &self.schedule
    }

    pub fn blocks(&self) -> &[TransformerBlock<T>] {
        &self.blocks
    }

    fn fold(&self, x: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
        let s = x.shape();
        let (b, seq, d) = (s[0], s[1], s[2]);
        let a = self.schedule.radix();
        x.reshape(&[b, seq / (a * stride), a, stride, d])?
            .permute_axes(&[0, 1, 3, 2, 4])?
            .reshape(&[b * seq / a, a, d])
    }

    fn unfold(&self, x: &Tensor<T>, batch: usize, seq: usize, stride: usize) -> Result<Tensor<T>> {
        let d = x.shape()[2];
        let a = self.schedule.radix();
        x.reshape(&[batch, seq / (a * stride), stride, a, d])?
            .permute_axes(&[0, 1, 3, 2, 4])?
            .reshape(&[batch, seq, d])
    }

    fn fold_token_mask(&self, m: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
        let s = m.shape();
        let (b, seq) = (s[0], s[1]);
        let a = self.schedule.radix();
        let grouped = match self.mask_mode {
            MaskMode::Permuted => m
                .reshape(&[b, seq / (a * stride), a, stride])?
                .permute_axes(&[0, 1, 3, 2])?
                .reshape(&[b * seq / a, a])?,
            MaskMode::Unpermuted => m.reshape(&[b * seq / a, a])?,
        };
        grouped.reshape(&[b * seq / a, 1, 1, a])
    }

    /// `x: [B, S, D]` with `S` equal to the schedule width.
    pub fn forward(&self, x: &Tensor<T>, mask: Option<&AttentionMask<T>>) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() != 3 || s[1] != self.schedule.n() {
            return Err(Error::Schedule(format!(
                "expected [B, {}, D] input, got {s:?}",
                self.schedule.n()
            )));
        }
        let (b, seq) = (s[0], s[1]);
        let mut h = x.clone();
        for (i, block) in self.blocks.iter().enumerate() {
            let stride = self.schedule.stride(i % self.schedule.layers());
            let folded = self.fold(&h, stride)?;
            self.permutations.set(self.permutations.get() + 1);
            let fmask = match mask {
                None => None,
                Some(AttentionMask::Tokens(m)) => {
                    Some(AttentionMask::Scores(self.fold_token_mask(m, stride)?))
                }
                // a score mask must already be shaped for the folded blocks
                Some(AttentionMask::Scores(m)) => Some(AttentionMask::Scores(m.clone())),
            };
            let mixed = block.forward(&folded, fmask.as_ref())?;
            h = self.unfold(&mixed, b, seq, stride)?;
            self.permutations.set(self.permutations.get() + 1);
        }
        Ok(h)
    }

    pub fn permutation_count(&self) -> u64 {
        self.permutations.get()
    }

    pub fn reset_permutation_count(&self) {
        self.permutations.set(0);
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        self.blocks.iter().flat_map(TransformerBlock::params).collect()
    }

    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(TransformerBlock::param_count).sum()
    }
}

/// Attention with the channel axis split into `groups` independent slices,
/// each with its own projections (Appendix-style token-group parallelism).
/// With one head per group the output projection commutes with the head
/// reshape, so it can be folded into `wv` ([`absorb_wout`]
/// (Self::absorb_wout)) without changing the function.
pub struct TokenParallelAttention<T: Scalar> {
    wq: Vec<Tensor<T>>,
    wk: Vec<Tensor<T>>,
    wv: Vec<Tensor<T>>,
    wout: Option<Vec<Tensor<T>>>,
    heads_per_group: usize,
    dim: usize,
}

impl<T: Scalar> TokenParallelAttention<T> {
    pub fn new(
        dim: usize,
        groups: usize,
        heads_per_group: usize,
        use_wout: bool,
        rng: &mut DetRng,
    ) -> Result<Self> {
        if groups == 0 || dim % groups != 0 {
            return Err(Error::Schedule(format!("width {dim} is not divisible into {groups} groups")));
        }
        let dg = dim / groups;
        if heads_per_group == 0 || dg % heads_per_group != 0 {
            return Err(Error::Schedule(format!(
                "group width {dg} is not divisible into {heads_per_group} heads"
            )));
        }
        let bound = 1.0 / (dg as f64).sqrt();
        let mut bank = |_: &str| -> Vec<Tensor<T>> {
            (0..groups)
                .map(|_| Tensor::uniform(&[dg, dg], -bound, bound, rng).with_grad())
                .collect()
        };
        Ok(Self {
            wq: bank("q"),
            wk: bank("k"),
            wv: bank("v"),
            wout: use_wout.then(|| bank("out")),
            heads_per_group,
            dim,
        })
    }

    pub fn groups(&self) -> usize {
        self.wq.len()
    }

    pub fn group_dim(&self) -> usize {
        self.dim / self.groups()
    }

    /// `x: [B, S, D]`; mask semantics as in [`TransformerBlock::forward`].
    pub fn forward(&self, x: &Tensor<T>, mask: Option<&AttentionMask<T>>) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() != 3 || s[2] != self.dim {
            return Err(Error::ShapeMismatch { op: "token_parallel", left: s, right: vec![self.dim] });
        }
        let score_mask = match mask {
            None => None,
            Some(AttentionMask::Scores(m)) => Some(m.clone()),
            Some(AttentionMask::Tokens(m)) => Some(m.reshape(&[s[0], 1, 1, s[1]])?),
        };
        let dg = self.group_dim();
        let mut parts = Vec::with_capacity(self.groups());
        for g in 0..self.groups() {
            let xg = x.narrow(2, g * dg, dg)?;
            parts.push(mhsa(
                &xg,
                &self.wq[g],
                &self.wk[g],
                &self.wv[g],
                self.wout.as_ref().map(|w| &w[g]),
                self.heads_per_group,
                score_mask.as_ref(),
            )?);
        }
        Tensor::concat(&parts, 2)
    }

    /// Fold each group's output projection into its value projection,
    /// yielding a functionally identical model without `wout`. Requires one
    /// head per group.
    pub fn absorb_wout(&self) -> Result<Self> {
        let wout = self.wout.as_ref().ok_or(Error::NoGrad("no wout to absorb"))?;
        if self.heads_per_group != 1 {
            return Err(Error::Schedule(format!(
                "wout only commutes past the head split with 1 head per group, have {}",
                self.heads_per_group
            )));
        }
        let wv = self
            .wv
            .iter()
            .zip(wout)
            .map(|(v, o)| Ok(v.matmul(o)?.detach().with_grad()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            wq: self.wq.clone(),
            wk: self.wk.clone(),
            wv,
            wout: None,
            heads_per_group: 1,
            dim: self.dim,
        })
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        let mut out: Vec<Tensor<T>> = Vec::new();
        out.extend(self.wq.iter().cloned());
        out.extend(self.wk.iter().cloned());
        out.extend(self.wv.iter().cloned());
        if let Some(w) = &self.wout {
            out.extend(w.iter().cloned());
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(Tensor::len).sum()
    }
}

/// Which attention flavor a [`Vit`] stacks.
pub enum VitBlocks<T: Scalar> {
    Dense(Vec<TransformerBlock<T>>),
    Butterfly(ButterflyAttention<T>),
}

/// Patch ViT: patchify, linear embed, transformer stack, final norm, mean
/// pool, linear head. No positional encoding; token mixing is attention's
/// job, and the butterfly variant is judged on exactly that ability.
pub struct Vit<T: Scalar> {
    patch: usize,
    side: usize,
    embed_w: Tensor<T>,
    embed_b: Tensor<T>,
    blocks: VitBlocks<T>,
    final_gain: Tensor<T>,
    final_bias: Tensor<T>,
    head_w: Tensor<T>,
    head_b: Tensor<T>,
}

impl<T: Scalar> Vit<T> {
    #[allow(clippy::too_many_arguments)]
    fn build(
        side: usize,
        channels: usize,
        patch: usize,
        dim: usize,
        classes: usize,
        blocks: VitBlocks<T>,
        rng: &mut DetRng,
    ) -> Result<Self> {
        if patch == 0 || side % patch != 0 {
            return Err(Error::Schedule(format!(
                "patch size {patch} does not divide image side {side}"
            )));
        }
        let in_width = patch * patch * channels;
        let eb = 1.0 / (in_width as f64).sqrt();
        let hb = 1.0 / (dim as f64).sqrt();
        Ok(Self {
            patch,
            side,
            embed_w: Tensor::uniform(&[in_width, dim], -eb, eb, rng).with_grad(),
            embed_b: Tensor::zeros(&[dim]).with_grad(),
            blocks,
            final_gain: Tensor::ones(&[dim]).with_grad(),
            final_bias: Tensor::zeros(&[dim]).with_grad(),
            head_w: Tensor::uniform(&[dim, classes], -hb, hb, rng).with_grad(),
            head_b: Tensor::zeros(&[classes]).with_grad(),
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn dense(
        side: usize,
        channels: usize,
        patch: usize,
        dim: usize,
        depth: usize,
        heads: usize,
        expansion: usize,
        classes: usize,
        rng: &mut DetRng,
    ) -> Result<Self> {
        let blocks = (0..depth)
            .map(|_| TransformerBlock::new(dim, heads, expansion, rng))
            .collect::<Result<Vec<_>>>()?;
        Self::build(side, channels, patch, dim, classes, VitBlocks::Dense(blocks), rng)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn butterfly(
        side: usize,
        channels: usize,
        patch: usize,
        dim: usize,
        depth: usize,
        heads: usize,
        expansion: usize,
        radix: usize,
        classes: usize,
        rng: &mut DetRng,
    ) -> Result<Self> {
        if patch == 0 || side % patch != 0 {
            return Err(Error::Schedule(format!(
                "patch size {patch} does not divide image side {side}"
            )));
        }
        let tokens = (side / patch) * (side / patch);
        let schedule = ButterflySchedule::new(tokens, radix)?;
        let attn = ButterflyAttention::new(schedule, depth, dim, heads, expansion, rng)?;
        Self::build(side, channels, patch, dim, classes, VitBlocks::Butterfly(attn), rng)
    }

    pub fn tokens(&self) -> usize {
        (self.side / self.patch) * (self.side / self.patch)
    }

    pub fn dim(&self) -> usize {
        self.embed_w.shape()[1]
    }

    pub fn embed_weight(&self) -> &Tensor<T> {
        &self.embed_w
    }

    /// `x: [B, C, I, I]` to logits `[B, classes]`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let patches = extract_patches(x, self.patch)?;
        let s = patches.shape();
        let (b, tokens) = (s[0], s[1]);
        let dim = self.dim();
        let mut h = patches
            .reshape(&[b * tokens, s[2]])?
            .matmul(&self.embed_w)?
            .add(&self.embed_b)?
            .reshape(&[b, tokens, dim])?;
        match &self.blocks {
            VitBlocks::Dense(blocks) => {
                for block in blocks {
                    h = block.forward(&h, None)?;
                }
            }
            VitBlocks::Butterfly(attn) => {
                h = attn.forward(&h, None)?;
            }
        }
        let pooled = h
            .layer_norm(&self.final_gain, &self.final_bias, 2)?
            .mean_axis(1)?;
        pooled.matmul(&self.head_w)?.add(&self.head_b)
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        let mut out = vec![self.embed_w.clone(), self.embed_b.clone()];
        match &self.blocks {
            VitBlocks::Dense(blocks) => {
                out.extend(blocks.iter().flat_map(TransformerBlock::params))
            }
            VitBlocks::Butterfly(attn) => out.extend(attn.params()),
        }
        out.extend([
            self.final_gain.clone(),
            self.final_bias.clone(),
            self.head_w.clone(),
            self.head_b.clone(),
        ]);
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(Tensor::len).sum()
    }

    pub fn permutation_count(&self) -> u64 {
        match &self.blocks {
            VitBlocks::Dense(_) => 0,
            VitBlocks::Butterfly(attn) => attn.permutation_count(),
        }
    }
}

impl<T: Scalar> CostAccounted for TransformerBlock<T> {
    fn param_count(&self) -> usize {
        self.param_count()
    }
}

impl<T: Scalar> CostAccounted for ButterflyAttention<T> {
    fn param_count(&self) -> usize {
        self.param_count()
    }

    fn permutation_count(&self) -> u64 {
        self.permutation_count()
    }

    fn module_costs(&self) -> Vec<ModuleCost> {
        self.blocks
            .iter()
            .enumerate()
            .map(|(i, b)| ModuleCost { name: format!("block{i}"), params: b.param_count() })
            .collect()
    }
}

impl<T: Scalar> CostAccounted for TokenParallelAttention<T> {
    fn param_count(&self) -> usize {
        self.param_count()
    }
}

impl<T: Scalar> CostAccounted for Vit<T> {
    fn param_count(&self) -> usize {
        self.param_count()
    }

    fn permutation_count(&self) -> u64 {
        self.permutation_count()
    }

    fn module_costs(&self) -> Vec<ModuleCost> {
        let blocks = match &self.blocks {
            VitBlocks::Dense(b) => b.iter().map(TransformerBlock::param_count).sum(),
            VitBlocks::Butterfly(attn) => attn.param_count(),
        };
        vec![
            ModuleCost {
                name: "embed".into(),
                params: self.embed_w.len() + self.embed_b.len(),
            },
            ModuleCost { name: "blocks".into(), params: blocks },
            ModuleCost {
                name: "head".into(),
                params: self.final_gain.len()
                    + self.final_bias.len()
                    + self.head_w.len()
                    + self.head_b.len(),
            },
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counters;
    use crate::tensor::grad_check;

    fn rng() -> DetRng {
        DetRng::new(41)
    }

    #[test]
    fn single_token_attention_returns_v() {
        let mut r = rng();
        let q = Tensor::<f64>::uniform(&[1, 2, 1, 3], -1.0, 1.0, &mut r);
        let k = Tensor::<f64>::uniform(&[1, 2, 1, 3], -1.0, 1.0, &mut r);
        let v = Tensor::<f64>::uniform(&[1, 2, 1, 3], -1.0, 1.0, &mut r);
        let out = scaled_dot_attention(&q, &k, &v, None).unwrap();
        assert_eq!(out.value(), v.value());
    }

    #[test]
    fn identical_keys_average_the_values() {
        let mut r = rng();
        let q = Tensor::<f64>::uniform(&[1, 1, 4, 2], -1.0, 1.0, &mut r);
        let krow: Vec<f64> = vec![0.3, -0.7];
        let k = Tensor::from_vec(&[1, 1, 4, 2], krow.repeat(4)).unwrap();
        let v = Tensor::<f64>::uniform(&[1, 1, 4, 2], -1.0, 1.0, &mut r);
        let out = scaled_dot_attention(&q, &k, &v, None).unwrap().value();
        let vv = v.value();
        for c in 0..2 {
            let mean = (0..4).map(|t| vv[t * 2 + c]).sum::<f64>() / 4.0;
            for t in 0..4 {
                assert!((out[t * 2 + c] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_matches_a_per_pair_oracle() {
        let mut r = rng();
        let (h, n, d) = (2, 3, 4);
        let q = Tensor::<f64>::uniform(&[1, h, n, d], -1.0, 1.0, &mut r);
        let k = Tensor::<f64>::uniform(&[1, h, n, d], -1.0, 1.0, &mut r);
        let v = Tensor::<f64>::uniform(&[1, h, n, d], -1.0, 1.0, &mut r);
        let mask = Tensor::<f64>::from_vec(&[1, 1, 1, n], vec![1.0, 1.0, 0.0]).unwrap();
        let out = scaled_dot_attention(&q, &k, &v, Some(&mask)).unwrap().value();
        let (qv, kv, vv) = (q.value(), k.value(), v.value());
        for hh in 0..h {
            for i in 0..n {
                // softmax over unmasked keys only
                let mut weights = [0.0f64; 3];
                for j in 0..2 {
                    let mut dot = 0.0;
                    for c in 0..d {
                        dot += qv[(hh * n + i) * d + c] * kv[(hh * n + j) * d + c];
                    }
                    weights[j] = (dot / (d as f64).sqrt()).exp();
                }
                let z: f64 = weights.iter().sum();
                for c in 0..d {
                    let mut expect = 0.0;
                    for j in 0..n {
                        expect += weights[j] / z * vv[(hh * n + j) * d + c];
                    }
                    assert!((out[(hh * n + i) * d + c] - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn block_is_equivariant_to_token_order() {
        let mut r = rng();
        let block = TransformerBlock::<f64>::new(8, 2, 2, &mut r).unwrap();
        let x = Tensor::<f64>::uniform(&[1, 5, 8], -1.0, 1.0, &mut r);
        let y = block.forward(&x, None).unwrap().value();
        // swap tokens 1 and 3
        let mut xv = x.value();
        for c in 0..8 {
            xv.swap(8 + c, 24 + c);
        }
        let xs = Tensor::from_vec(&[1, 5, 8], xv).unwrap();
        let ys = block.forward(&xs, None).unwrap().value();
        for t in 0..5 {
            let src = match t {
                1 => 3,
                3 => 1,
                _ => t,
            };
            for c in 0..8 {
                assert!((ys[t * 8 + c] - y[src * 8 + c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zeroed_output_paths_make_the_block_an_identity() {
        let mut r = rng();
        let block = TransformerBlock::<f64>::new(8, 2, 2, &mut r).unwrap();
        block.zero_out_for_identity();
        let x = Tensor::<f64>::uniform(&[2, 3, 8], -1.0, 1.0, &mut r);
        assert_eq!(block.forward(&x, None).unwrap().value(), x.value());
    }

    #[test]
    fn transformer_block_gradients_check_out() {
        let mut r = rng();
        let block = TransformerBlock::<f64>::new(8, 2, 2, &mut r).unwrap();
        let x = Tensor::<f64>::uniform(&[1, 4, 8], -1.0, 1.0, &mut r).with_grad();
        let w = Tensor::<f64>::uniform(&[1, 4, 8], 0.1, 1.0, &mut r);
        let f = || block.forward(&x, None).unwrap().mul(&w).unwrap().sum_all();
        assert!(grad_check(&f, &x, 1e-5).unwrap() < 1e-4);
        for p in [&block.wq, &block.wv, &block.ln1_gain, &block.mlp.weights()[0]] {
            assert!(grad_check(&f, p, 1e-5).unwrap() < 1e-4);
        }
    }

    #[test]
    fn full_radix_butterfly_equals_plain_blocks_bitwise() {
        let mut r = rng();
        let schedule = ButterflySchedule::new(4, 4).unwrap();
        let bf = ButterflyAttention::<f64>::new(schedule, 2, 8, 2, 2, &mut r).unwrap();
        let x = Tensor::<f64>::uniform(&[3, 4, 8], -1.0, 1.0, &mut r);
        let folded = bf.forward(&x, None).unwrap();
        let mut plain = x;
        for block in bf.blocks() {
            plain = block.forward(&plain, None).unwrap();
        }
        assert_eq!(folded.value(), plain.value());
    }

    #[test]
    fn identity_blocks_leave_tokens_in_order() {
        let mut r = rng();
        let schedule = ButterflySchedule::new(16, 4).unwrap();
        let bf = ButterflyAttention::<f64>::new(schedule, 4, 8, 2, 2, &mut r).unwrap();
        for block in bf.blocks() {
            block.zero_out_for_identity();
        }
        let x = Tensor::<f64>::uniform(&[2, 16, 8], -1.0, 1.0, &mut r);
        assert_eq!(bf.forward(&x, None).unwrap().value(), x.value());
        assert_eq!(bf.permutation_count(), 8);
    }

    #[test]
    fn butterfly_attention_score_macs_match_the_formula() {
        let mut r = rng();
        let schedule = ButterflySchedule::new(16, 4).unwrap();
        let bf = ButterflyAttention::<f64>::new(schedule, 2, 8, 2, 2, &mut r).unwrap();
        let x = Tensor::<f64>::uniform(&[1, 16, 8], -1.0, 1.0, &mut r);
        let (_, _, score) = counters::measure(|| bf.forward(&x, None).unwrap());
        // S * a * D per layer
        assert_eq!(score, 2 * 16 * 4 * 8);

        let block = TransformerBlock::<f64>::new(8, 2, 2, &mut r).unwrap();
        let (_, _, dense_score) = counters::measure(|| block.forward(&x, None).unwrap());
        // dense pays S^2 * D
        assert_eq!(dense_score, 16 * 16 * 8);
    }

    #[test]
    fn butterfly_attention_gradients_check_out() {
        let mut r = rng();
        let schedule = ButterflySchedule::new(16, 4).unwrap();
        let bf = ButterflyAttention::<f64>::new(schedule, 2, 4, 2, 2, &mut r).unwrap();
        let x = Tensor::<f64>::uniform(&[1, 16, 4], -1.0, 1.0, &mut r).with_grad();
        let w = Tensor::<f64>::uniform(&[1, 16, 4], 0.1, 1.0, &mut r);
        let f = || bf.forward(&x, None).unwrap().mul(&w).unwrap().sum_all();
        assert!(grad_check(&f, &x, 1e-5).unwrap() < 1e-4);
        assert!(grad_check(&f, &bf.blocks()[0].wq, 1e-5).unwrap() < 1e-4);
    }

    #[test]
    fn mask_modes_agree_on_uniform_masks() {
        let mut r = rng();
        let schedule = ButterflySchedule::new(16, 4).unwrap();
        let bf = ButterflyAttention::<f64>::new(schedule.clone(), 2, 8, 2, 2, &mut r).unwrap();
        let x = Tensor::<f64>::uniform(&[2, 16, 8], -1.0, 1.0, &mut r);
        let mask = AttentionMask::Tokens(Tensor::ones(&[2, 16]));
        let permuted = bf.forward(&x, Some(&mask)).unwrap().value();
        let unmasked = bf.forward(&x, None).unwrap().value();
        for (a, b) in permuted.iter().zip(&unmasked) {
            assert!((a - b).abs() < 1e-12);
        }

        let bf2 = ButterflyAttention::<f64>::new(schedule, 2, 8, 2, 2, &mut rng())
            .unwrap()
            .with_mask_mode(MaskMode::Unpermuted);
        let mask2 = AttentionMask::Tokens(Tensor::ones(&[2, 16]));
        let via_unpermuted = bf2.forward(&x, Some(&mask2)).unwrap().value();
        let plain2 = bf2.forward(&x, None).unwrap().value();
        for (a, b) in via_unpermuted.iter().zip(&plain2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_tokens_do_not_influence_others() {
        let mut r = rng();
        let block = TransformerBlock::<f64>::new(8, 2, 2, &mut r).unwrap();
        let x = Tensor::<f64>::uniform(&[1, 4, 8], -1.0, 1.0, &mut r);
        let mask = AttentionMask::Tokens(
            Tensor::from_vec(&[1, 4], vec![1.0, 1.0, 1.0, 0.0]).unwrap(),
        );
        let y = block.forward(&x, Some(&mask)).unwrap().value();
        // changing the masked token must leave the other outputs untouched
        let mut xv = x.value();
        for c in 0..8 {
            xv[3 * 8 + c] = 9.0;
        }
        let x2 = Tensor::from_vec(&[1, 4, 8], xv).unwrap();
        let mask2 = AttentionMask::Tokens(
            Tensor::from_vec(&[1, 4], vec![1.0, 1.0, 1.0, 0.0]).unwrap(),
        );
        let y2 = block.forward(&x2, Some(&mask2)).unwrap().value();
        for t in 0..3 {
            for c in 0..8 {
                assert_eq!(y[t * 8 + c], y2[t * 8 + c]);
            }
        }
    }

    #[test]
    fn one_group_token_parallel_is_plain_mhsa() {
        let mut r = rng();
        let tp = TokenParallelAttention::<f64>::new(8, 1, 2, true, &mut r).unwrap();
        let x = Tensor::<f64>::uniform(&[2, 5, 8], -1.0, 1.0, &mut r);
        let via_groups = tp.forward(&x, None).unwrap();
        let direct = mhsa(
            &x,
            &tp.wq[0],
            &tp.wk[0],
            &tp.wv[0],
            tp.wout.as_ref().map(|w| &w[0]),
            2,
            None,
        )
        .unwrap();
        assert_eq!(via_groups.value(), direct.value());
    }

    #[test]
    fn wout_absorption_preserves_the_function() {
        let mut r = rng();
        let tp = TokenParallelAttention::<f64>::new(16, 4, 1, true, &mut r).unwrap();
        let folded = tp.absorb_wout().unwrap();
        let x = Tensor::<f64>::uniform(&[2, 6, 16], -1.0, 1.0, &mut r);
        let a = tp.forward(&x, None).unwrap().value();
        let b = folded.forward(&x, None).unwrap().value();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-10);
        }
        assert_eq!(tp.param_count() - folded.param_count(), 4 * 4 * 4);
    }

    #[test]
    fn parameter_count_decreases_with_group_count() {
        let mut r = rng();
        let mut last = usize::MAX;
        for groups in [1usize, 2, 4, 8] {
            let tp = TokenParallelAttention::<f64>::new(16, groups, 1, true, &mut r).unwrap();
            assert!(tp.param_count() < last);
            last = tp.param_count();
        }
    }

    #[test]
    fn vit_shapes_and_gradient_flow() {
        let mut r = rng();
        let vit = Vit::<f64>::dense(32, 3, 4, 16, 1, 2, 2, 10, &mut r).unwrap();
        assert_eq!(vit.tokens(), 64);
        let x = Tensor::<f64>::uniform(&[2, 3, 32, 32], 0.0, 1.0, &mut r);
        let logits = vit.forward(&x).unwrap();
        assert_eq!(logits.shape(), vec![2, 10]);
        logits.cross_entropy(&[3, 7]).unwrap().backward().unwrap();
        assert!(vit.embed_weight().grad().is_some());

        let bvit = Vit::<f64>::butterfly(8, 3, 2, 8, 2, 2, 2, 4, 10, &mut r).unwrap();
        assert_eq!(bvit.tokens(), 16);
        let x = Tensor::<f64>::uniform(&[2, 3, 8, 8], 0.0, 1.0, &mut r);
        assert_eq!(bvit.forward(&x).unwrap().shape(), vec![2, 10]);
        assert_eq!(bvit.permutation_count(), 4);
        assert_eq!(
            bvit.param_count(),
            bvit.params().iter().map(Tensor::len).sum::<usize>()
        );
    }
}
