//! Patch-level mixers: non-overlapping patch extraction, the patch-only
//! mixer that alternates coprime patch sizes, and the standard MLP-Mixer
//! baseline with pluggable (dense or butterfly) mixing MLPs.
//!
//! The patch-only model never embeds into a token space. Every layer tiles
//! the image into `K x K` patches, runs one shared MLP over each flattened
//! patch (channels included), and writes the result back in place. When two
//! layer sizes share a factor, information stays trapped inside blocks of
//! `lcm(K_i)` pixels along each axis; coprime sizes make two layers reach
//! everything.

use crate::block_mlp::{ButterflyMlp, DenseMlp};
use crate::mixing::{CostAccounted, ModuleCost};
use crate::butterfly::ButterflySchedule;
use crate::error::{Error, Result};
use crate::rng::DetRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use alloc::vec::Vec;

pub fn gcd(a: usize, b: usize) -> usize {
    if b == 0 { a } else { gcd(b, a % b) }
}

pub fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

/// Least common multiple of a patch-size list: the axis-aligned block size
/// that repeated patch mixing can never escape.
pub fn effective_mixing_block(ks: &[usize]) -> usize {
    assert!(!ks.is_empty(), "need at least one patch size");
    ks.iter().copied().fold(1, lcm)
}

/// Tile `x: [B, C, I, I]` into non-overlapping `k x k` patches:
/// `[B, (I/k)^2, k^2*C]`. Tiles are ordered row-major; within a tile the
/// layout is channel-major, then row-major spatial, i.e. flattened `[C, k, k]`.
pub fn extract_patches<T: Scalar>(x: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 4 || s[2] != s[3] {
        return Err(Error::Schedule(format!("expected [B, C, I, I], got {s:?}")));
    }
    let (b, c, side) = (s[0], s[1], s[2]);
    if k == 0 || side % k != 0 {
        return Err(Error::Schedule(format!("patch size {k} does not divide image side {side}")));
    }
    let t = side / k;
    x.reshape(&[b, c, t, k, t, k])?
        .permute_axes(&[0, 2, 4, 1, 3, 5])?
        .reshape(&[b, t * t, k * k * c])
}

/// Exact inverse of [`extract_patches`] for the given geometry.
pub fn combine_patches<T: Scalar>(x: &Tensor<T>, k: usize, channels: usize, side: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    let t = side / k;
    if s.len() != 3 || k == 0 || side % k != 0 || s[1] != t * t || s[2] != k * k * channels {
        return Err(Error::Schedule(format!(
            "cannot reassemble {s:?} into [B, {channels}, {side}, {side}] from {k}x{k} patches"
        )));
    }
    x.reshape(&[s[0], t, t, channels, k, k])?
        .permute_axes(&[0, 3, 1, 4, 2, 5])?
        .reshape(&[s[0], channels, side, side])
}

/// The patch sizes a patch-only mixer cycles through, with their geometry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchSchedule {
    side: usize,
    channels: usize,
    patch_sizes: Vec<usize>,
}

impl PatchSchedule {
    pub fn new(side: usize, channels: usize, patch_sizes: &[usize]) -> Result<Self> {
        if patch_sizes.is_empty() {
            return Err(Error::Schedule("need at least one patch size".into()));
        }
        for &k in patch_sizes {
            if k == 0 || side % k != 0 {
                return Err(Error::Schedule(format!(
                    "patch size {k} does not divide image side {side}"
                )));
            }
        }
        Ok(Self { side, channels, patch_sizes: patch_sizes.to_vec() })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn patch_sizes(&self) -> &[usize] {
        &self.patch_sizes
    }

    /// Patch size used by layer `i`: round-robin through the list.
    pub fn layer_patch(&self, layer: usize) -> usize {
        self.patch_sizes[layer % self.patch_sizes.len()]
    }

    /// lcm of the sizes; equals the side length iff mixing can span the image.
    pub fn effective_mixing_block(&self) -> usize {
        effective_mixing_block(&self.patch_sizes)
    }

    /// True when every pair of distinct sizes is coprime.
    pub fn is_coprime(&self) -> bool {
        let ks = &self.patch_sizes;
        (0..ks.len()).all(|i| (i + 1..ks.len()).all(|j| gcd(ks[i], ks[j]) == 1))
    }
}

struct PatchMlpLayer<T: Scalar> {
    k: usize,
    ln_gain: Tensor<T>,
    ln_bias: Tensor<T>,
    mlp: DenseMlp<T>,
}

impl<T: Scalar> PatchMlpLayer<T> {
    fn new(k: usize, channels: usize, expansion: usize, rng: &mut DetRng) -> Self {
        let width = k * k * channels;
        Self {
            k,
            ln_gain: Tensor::ones(&[width]).with_grad(),
            ln_bias: Tensor::zeros(&[width]).with_grad(),
            mlp: DenseMlp::new(&[width, expansion * width, width], rng),
        }
    }

    /// Residual pre-norm patch MLP, shared across all patches of the layer.
    fn forward(&self, x: &Tensor<T>, channels: usize, side: usize) -> Result<Tensor<T>> {
        let patches = extract_patches(x, self.k)?;
        let s = patches.shape();
        let flat = patches.reshape(&[s[0] * s[1], s[2]])?;
        let mixed = self.mlp.forward(&flat.layer_norm(&self.ln_gain, &self.ln_bias, 1)?)?;
        let out = flat.add(&mixed)?.reshape(&s)?;
        combine_patches(&out, self.k, channels, side)
    }

    fn params(&self) -> Vec<Tensor<T>> {
        let mut out = vec![self.ln_gain.clone(), self.ln_bias.clone()];
        out.extend(self.mlp.params());
        out
    }
}

/// Mixer that only ever touches patches: no token embedding, no channel-mix
/// stage. Depth layers cycle through the schedule's patch sizes; the head
/// mean-pools the final layer's patches and classifies linearly.
pub struct PatchOnlyMixer<T: Scalar> {
    schedule: PatchSchedule,
    layers: Vec<PatchMlpLayer<T>>,
    head_w: Tensor<T>,
    head_b: Tensor<T>,
}

impl<T: Scalar> PatchOnlyMixer<T> {
    pub fn new(
        schedule: PatchSchedule,
        depth: usize,
        expansion: usize,
        classes: usize,
        rng: &mut DetRng,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::Schedule("depth must be positive".into()));
        }
        let layers: Vec<_> = (0..depth)
            .map(|i| PatchMlpLayer::new(schedule.layer_patch(i), schedule.channels(), expansion, rng))
            .collect();
        let last_width =
            schedule.layer_patch(depth - 1).pow(2) * schedule.channels();
        let bound = 1.0 / (last_width as f64).sqrt();
        Ok(Self {
            schedule,
            layers,
            head_w: Tensor::uniform(&[last_width, classes], -bound, bound, rng).with_grad(),
            head_b: Tensor::zeros(&[classes]).with_grad(),
        })
    }

    pub fn schedule(&self) -> &PatchSchedule {
        &self.schedule
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// `x: [B, C, I, I]` to logits `[B, classes]`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, side) = (self.schedule.channels(), self.schedule.side());
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward(&h, c, side)?;
        }
        let pooled = extract_patches(&h, self.layers.last().unwrap().k)?.mean_axis(1)?;
        pooled.matmul(&self.head_w)?.add(&self.head_b)
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        let mut out: Vec<_> = self.layers.iter().flat_map(PatchMlpLayer::params).collect();
        out.push(self.head_w.clone());
        out.push(self.head_b.clone());
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(Tensor::len).sum()
    }

    pub fn macs(&self, batch: usize) -> u64 {
        let mut total = 0u64;
        for layer in &self.layers {
            let patches = (self.schedule.side() / layer.k).pow(2);
            total += layer.mlp.macs(batch * patches);
        }
        let head = self.head_w.shape();
        total + (batch * head[0] * head[1]) as u64
    }
}

/// Which MLP fills the mixing slots of the standard mixer baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixKind {
    Dense,
    /// Butterfly with a single affine bank per layer (no activation).
    ButterflyLinear { radix: usize },
    /// Full butterfly MLP, hidden expansion 2 inside each block.
    Butterfly { radix: usize },
}

enum MixMlp<T: Scalar> {
    Dense(DenseMlp<T>),
    Butterfly(ButterflyMlp<T>),
}

impl<T: Scalar> MixMlp<T> {
    fn new(kind: MixKind, width: usize, expansion: usize, rng: &mut DetRng) -> Result<Self> {
        Ok(match kind {
            MixKind::Dense => {
                Self::Dense(DenseMlp::new(&[width, expansion * width, width], rng))
            }
            MixKind::ButterflyLinear { radix } => Self::Butterfly(ButterflyMlp::with_expansion(
                ButterflySchedule::new(width, radix)?,
                1,
                rng,
            )?),
            MixKind::Butterfly { radix } => Self::Butterfly(ButterflyMlp::with_expansion(
                ButterflySchedule::new(width, radix)?,
                2,
                rng,
            )?),
        })
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Self::Dense(m) => m.forward(x),
            Self::Butterfly(m) => m.forward(x),
        }
    }

    fn params(&self) -> Vec<Tensor<T>> {
        match self {
            Self::Dense(m) => m.params(),
            Self::Butterfly(m) => m.params(),
        }
    }

    fn macs(&self, batch: usize) -> u64 {
        match self {
            Self::Dense(m) => m.macs(batch),
            Self::Butterfly(m) => m.macs(batch),
        }
    }

    fn permutation_count(&self) -> u64 {
        match self {
            Self::Dense(_) => 0,
            Self::Butterfly(m) => m.permutation_count(),
        }
    }
}

struct MixerBlock<T: Scalar> {
    ln1_gain: Tensor<T>,
    ln1_bias: Tensor<T>,
    token_mix: MixMlp<T>,
    ln2_gain: Tensor<T>,
    ln2_bias: Tensor<T>,
    channel_mix: MixMlp<T>,
}

/// Standard MLP-Mixer: patch embedding, then alternating token-mix and
/// channel-mix MLPs with pre-norm residuals, mean pool, linear head. The two
/// mixing slots accept dense or butterfly MLPs so the structured variants
/// can be compared in place.
pub struct MlpMixer<T: Scalar> {
    patch: usize,
    side: usize,
    embed_w: Tensor<T>,
    embed_b: Tensor<T>,
    blocks: Vec<MixerBlock<T>>,
    head_w: Tensor<T>,
    head_b: Tensor<T>,
}

impl<T: Scalar> MlpMixer<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        side: usize,
        channels: usize,
        patch: usize,
        dim: usize,
        depth: usize,
        token_kind: MixKind,
        channel_kind: MixKind,
        classes: usize,
        rng: &mut DetRng,
    ) -> Result<Self> {
        if patch == 0 || side % patch != 0 {
            return Err(Error::Schedule(format!(
                "patch size {patch} does not divide image side {side}"
            )));
        }
        let tokens = (side / patch).pow(2);
        let in_width = patch * patch * channels;
        let bound = 1.0 / (in_width as f64).sqrt();
        let mut blocks = Vec::with_capacity(depth);
        for _ in 0..depth {
            blocks.push(MixerBlock {
                ln1_gain: Tensor::ones(&[dim]).with_grad(),
                ln1_bias: Tensor::zeros(&[dim]).with_grad(),
                token_mix: MixMlp::new(token_kind, tokens, 2, rng)?,
                ln2_gain: Tensor::ones(&[dim]).with_grad(),
                ln2_bias: Tensor::zeros(&[dim]).with_grad(),
                channel_mix: MixMlp::new(channel_kind, dim, 2, rng)?,
            });
        }
        let hb = 1.0 / (dim as f64).sqrt();
        Ok(Self {
            patch,
            side,

            embed_w: Tensor::uniform(&[in_width, dim], -bound, bound, rng).with_grad(),
            embed_b: Tensor::zeros(&[dim]).with_grad(),
            blocks,
            head_w: Tensor::uniform(&[dim, classes], -hb, hb, rng).with_grad(),
            head_b: Tensor::zeros(&[classes]).with_grad(),
        })
    }

    pub fn tokens(&self) -> usize {
        (self.side / self.patch).pow(2)
    }

    pub fn dim(&self) -> usize {
        self.embed_w.shape()[1]
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
            .add(&self.embed_b)?;
        for blk in &self.blocks {
            // token mixing runs over the token axis, so transpose to
            // [b*dim, tokens], mix, and transpose back
            let normed = h.layer_norm(&blk.ln1_gain, &blk.ln1_bias, 1)?;
            let t = normed
                .reshape(&[b, tokens, dim])?
                .permute_axes(&[0, 2, 1])?
                .reshape(&[b * dim, tokens])?;
            let mixed = blk
                .token_mix
                .forward(&t)?
                .reshape(&[b, dim, tokens])?
                .permute_axes(&[0, 2, 1])?
                .reshape(&[b * tokens, dim])?;
            h = h.add(&mixed)?;
            let normed = h.layer_norm(&blk.ln2_gain, &blk.ln2_bias, 1)?;
            h = h.add(&blk.channel_mix.forward(&normed)?)?;
        }
        let pooled = h.reshape(&[b, tokens, dim])?.mean_axis(1)?;
        pooled.matmul(&self.head_w)?.add(&self.head_b)
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        let mut out = vec![self.embed_w.clone(), self.embed_b.clone()];
        for blk in &self.blocks {
            out.extend([
                blk.ln1_gain.clone(),
                blk.ln1_bias.clone(),
            ]);
            out.extend(blk.token_mix.params());
            out.extend([blk.ln2_gain.clone(), blk.ln2_bias.clone()]);
            out.extend(blk.channel_mix.params());
        }
        out.push(self.head_w.clone());
        out.push(self.head_b.clone());
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(Tensor::len).sum()
    }

    pub fn mixing_param_count(&self) -> usize {
        self.blocks
            .iter()
            .flat_map(|b| b.token_mix.params().into_iter().chain(b.channel_mix.params()))
            .map(|t| t.len())
            .sum()
    }

    pub fn macs(&self, batch: usize) -> u64 {
        let tokens = self.tokens();
        let dim = self.dim();
        let embed = self.embed_w.shape();
        let mut total = (batch * tokens * embed[0] * embed[1]) as u64;
        for blk in &self.blocks {
            total += blk.token_mix.macs(batch * dim);
            total += blk.channel_mix.macs(batch * tokens);
        }
        let head = self.head_w.shape();
        total + (batch * head[0] * head[1]) as u64
    }

    pub fn permutation_count(&self) -> u64 {
        self.blocks
            .iter()
            .map(|b| b.token_mix.permutation_count() + b.channel_mix.permutation_count())
            .sum()
    }
}

impl<T: Scalar> CostAccounted for PatchOnlyMixer<T> {
    fn param_count(&self) -> usize {
        self.param_count()
    }

    fn module_costs(&self) -> Vec<ModuleCost> {
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| ModuleCost {
                name: format!("patch{}x{0}_layer{i}", l.k),
                params: l.mlp.param_count() + l.ln_gain.len() + l.ln_bias.len(),
            })
            .collect()
    }
}

impl<T: Scalar> CostAccounted for MlpMixer<T> {
    fn param_count(&self) -> usize {
        self.param_count()
    }

    fn permutation_count(&self) -> u64 {
        self.permutation_count()
    }

    fn module_costs(&self) -> Vec<ModuleCost> {
        vec![
            ModuleCost {
                name: "embed".into(),
                params: self.embed_w.len() + self.embed_b.len(),
            },
            ModuleCost { name: "mixing".into(), params: self.mixing_param_count() },
            ModuleCost {
                name: "head".into(),
                params: self.head_w.len() + self.head_b.len(),
            },
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;

    fn rng() -> DetRng {
        DetRng::new(31)
    }

    #[test]
    fn lcm_of_patch_lists() {
        assert_eq!(effective_mixing_block(&[6, 8]), 24);
        assert_eq!(effective_mixing_block(&[5, 7]), 35);
        assert_eq!(effective_mixing_block(&[4, 4]), 4);
        assert!(PatchSchedule::new(35, 3, &[5, 7]).unwrap().is_coprime());
        assert!(!PatchSchedule::new(48, 3, &[6, 8]).unwrap().is_coprime());
        assert!(PatchSchedule::new(32, 3, &[5]).is_err());
    }

    #[test]
    fn extract_indexing_matches_hand_enumeration() {
        let mut r = rng();
        // iota over a 1-channel 4x4 image: pixel (row, col) holds 4*row + col
        let x = Tensor::<f64>::from_vec(&[1, 1, 4, 4], (0..16).map(f64::from).collect()).unwrap();
        let p = extract_patches(&x, 2).unwrap();
        assert_eq!(p.shape(), vec![1, 4, 4]);
        // pixel (0,3) sits in tile 1 at in-tile offset (0,1)
        assert_eq!(p.get(&[0, 1, 1]), 3.0);
        // tile 2 covers rows 2..4, cols 0..2
        assert_eq!(p.get(&[0, 2, 0]), 8.0);

        let y = Tensor::<f64>::uniform(&[2, 3, 6, 6], -1.0, 1.0, &mut r);
        let round = combine_patches(&extract_patches(&y, 3).unwrap(), 3, 3, 6).unwrap();
        assert_eq!(round.value(), y.value());

        // a full-size patch is the flattened image
        let whole = extract_patches(&y, 6).unwrap();
        assert_eq!(whole.shape(), vec![2, 1, 108]);
        assert_eq!(whole.value(), y.value());
    }

    #[test]
    fn extract_rejects_bad_geometry() {
        let x = Tensor::<f64>::zeros(&[1, 3, 6, 6]);
        assert!(extract_patches(&x, 4).is_err());
        assert!(extract_patches(&x.reshape(&[1, 3, 4, 9]).unwrap(), 2).is_err());
        assert!(combine_patches(&Tensor::<f64>::zeros(&[1, 4, 12]), 3, 3, 6).is_err());
    }

    #[test]
    fn shared_patch_mlp_is_equivariant_to_patch_order() {
        let mut r = rng();
        let layer = PatchMlpLayer::<f64>::new(3, 2, 2, &mut r);
        let x = Tensor::<f64>::uniform(&[1, 2, 6, 6], -1.0, 1.0, &mut r);
        let y = layer.forward(&x, 2, 6).unwrap();

        // swap the contents of tiles 0 and 3, rerun, and expect the outputs
        // to swap the same way
        let patches = extract_patches(&x, 3).unwrap();
        let mut swapped = patches.value();
        let w = patches.shape()[2];
        for i in 0..w {
            swapped.swap(i, 3 * w + i);
        }
        let xs = combine_patches(
            &Tensor::from_vec(&patches.shape(), swapped).unwrap(),
            3,
            2,
            6,
        )
        .unwrap();
        let ys = layer.forward(&xs, 2, 6).unwrap();

        let yp = extract_patches(&y, 3).unwrap().value();
        let ysp = extract_patches(&ys, 3).unwrap().value();
        for i in 0..w {
            assert_eq!(ysp[i], yp[3 * w + i]);
            assert_eq!(ysp[3 * w + i], yp[i]);
            assert_eq!(ysp[w + i], yp[w + i]);
        }
    }

    #[test]
    fn patch_only_mixer_shapes_and_grads() {
        let mut r = rng();
        let schedule = PatchSchedule::new(6, 2, &[3, 2]).unwrap();
        let model = PatchOnlyMixer::<f64>::new(schedule, 1, 2, 4, &mut r).unwrap();
        let x = Tensor::<f64>::uniform(&[2, 2, 6, 6], -1.0, 1.0, &mut r).with_grad();
        let logits = model.forward(&x).unwrap();
        assert_eq!(logits.shape(), vec![2, 4]);

        let f = || model.forward(&x).unwrap().cross_entropy(&[1, 3]).unwrap();
        assert!(grad_check(&f, &x, 1e-5).unwrap() < 1e-4);
        for p in model.params() {
            assert!(grad_check(&f, &p, 1e-5).unwrap() < 1e-4);
        }
        assert_eq!(
            model.param_count(),
            model.params().iter().map(Tensor::len).sum::<usize>()
        );
    }

    #[test]
    fn mixer_baseline_runs_and_counts() {
        let mut r = rng();
        let dense = MlpMixer::<f64>::new(
            8, 3, 4, 16, 2, MixKind::Dense, MixKind::Dense, 10, &mut r,
        )
        .unwrap();
        assert_eq!(dense.tokens(), 4);
        let x = Tensor::<f64>::uniform(&[2, 3, 8, 8], -1.0, 1.0, &mut r);
        assert_eq!(dense.forward(&x).unwrap().shape(), vec![2, 10]);
        assert_eq!(dense.permutation_count(), 0);

        let bfly = MlpMixer::<f64>::new(
            8, 3, 4, 16, 2,
            MixKind::Butterfly { radix: 2 },
            MixKind::Butterfly { radix: 4 },
            10, &mut r,
        )
        .unwrap();
        assert_eq!(bfly.forward(&x).unwrap().shape(), vec![2, 10]);
        // tokens: radix 2 over 4 -> 2 layers; channels: radix 4 over 16 -> 2
        // layers; two movements per butterfly layer, per mixer block
        assert_eq!(bfly.permutation_count(), 2 * (2 * 2 + 2 * 2));

        // swapping dense mixing for butterfly changes only the mixing params
        let diff = dense.param_count() - dense.mixing_param_count();
        let bdiff = bfly.param_count() - bfly.mixing_param_count();
        assert_eq!(diff, bdiff);
        assert!(bfly.mixing_param_count() < dense.mixing_param_count());
    }

    #[test]
    fn patch_only_costs_less_than_mixer_at_matched_depth() {
        let mut r = rng();
        let schedule = PatchSchedule::new(32, 3, &[4, 8]).unwrap();
        let patch_only = PatchOnlyMixer::<f64>::new(schedule, 4, 2, 10, &mut r).unwrap();
        let mixer = MlpMixer::<f64>::new(
            32, 3, 4, 128, 4, MixKind::Dense, MixKind::Dense, 10, &mut r,
        )
        .unwrap();
        assert!(patch_only.macs(1) < mixer.macs(1));
    }
}
