//! Block-diagonal linear banks, block MLPs, and the butterfly MLP stack.
//!
//! A [`BlockLinear`] applies an independent affine map to each contiguous
//! block of channels; stacking them with GELU in between gives [`BlockMlp`],
//! whose Jacobian is block-diagonal, so no information crosses block borders.
//! [`ButterflyMlp`] restores the cross-block flow by sandwiching one
//! `BlockMlp` per butterfly layer between that layer's permutation and its
//! inverse. With a radix equal to the full width it degenerates to a plain
//! dense MLP, which [`DenseMlp`] also provides directly as the baseline.

use crate::butterfly::ButterflySchedule;
use crate::error::{Error, Result};
use crate::mixing::{CostAccounted, ModuleCost};
use crate::rng::DetRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use alloc::vec::Vec;
use core::cell::Cell;

fn uniform_init<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut DetRng) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, rng).with_grad()
}

/// A bank of `num_blocks` affine maps `in_block -> out_block`, each applied
/// to its own slice of the input. Weight is `[num_blocks, in_block,
/// out_block]`, bias `[num_blocks, 1, out_block]`.
pub struct BlockLinear<T: Scalar> {
    weight: Tensor<T>,
    bias: Option<Tensor<T>>,
}

impl<T: Scalar> BlockLinear<T> {
    pub fn new(num_blocks: usize, in_block: usize, out_block: usize, bias: bool, rng: &mut DetRng) -> Self {
        Self {
            weight: uniform_init(&[num_blocks, in_block, out_block], in_block, rng),
            bias: bias.then(|| uniform_init(&[num_blocks, 1, out_block], in_block, rng)),
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_block(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_block(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn weight(&self) -> &Tensor<T> {
        &self.weight
    }

    pub fn bias(&self) -> Option<&Tensor<T>> {
        self.bias.as_ref()
    }

    /// `x` is `[num_blocks, batch, in_block]`, already regrouped so that
    /// block `b`'s channels sit in slice `b`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let xs = x.shape();
        if xs.len() != 3 || xs[0] != self.num_blocks() {
            return Err(Error::ShapeMismatch {
                op: "block_linear",
                left: xs,
                right: self.weight.shape(),
            });
        }
        let y = x.batched_matmul(&self.weight)?;
        match &self.bias {
            Some(b) => y.add(b),
            None => Ok(y),
        }
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        let mut out = vec![self.weight.clone()];
        if let Some(b) = &self.bias {
            out.push(b.clone());
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(Tensor::len).sum()
    }

    pub fn macs(&self, batch: usize) -> u64 {
        (self.num_blocks() * batch * self.in_block() * self.out_block()) as u64
    }
}

/// A stack of [`BlockLinear`] layers over a shared block grid, GELU between
/// consecutive layers and none after the last. `layer_block_dims` chains the
/// per-block widths, e.g. `[4, 8, 4]` for a two-layer expansion-2 MLP.
pub struct BlockMlp<T: Scalar> {
    layers: Vec<BlockLinear<T>>,
}

impl<T: Scalar> BlockMlp<T> {
    pub fn new(num_blocks: usize, layer_block_dims: &[usize], rng: &mut DetRng) -> Self {
        assert!(layer_block_dims.len() >= 2, "need at least an input and an output width");
        let layers = layer_block_dims
            .windows(2)
            .map(|w| BlockLinear::new(num_blocks, w[0], w[1], true, rng))
            .collect();
        Self { layers }
    }

    pub fn num_blocks(&self) -> usize {
        self.layers[0].num_blocks()
    }

    pub fn in_block(&self) -> usize {
        self.layers[0].in_block()
    }

    pub fn out_block(&self) -> usize {
        self.layers.last().unwrap().out_block()
    }

    /// Per-block MLP over `x: [batch, dim]` with `dim = num_blocks *
    /// in_block`; blocks are the contiguous runs of `in_block` channels.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let xs = x.shape();
        if xs.len() != 2 || xs[1] != self.num_blocks() * self.in_block() {
            return Err(Error::ShapeMismatch {
                op: "block_mlp",
                left: xs,
                right: vec![self.num_blocks(), self.in_block()],
            });
        }
        let batch = xs[0];
        let mut h = x
            .reshape(&[batch, self.num_blocks(), self.in_block()])?
            .permute_axes(&[1, 0, 2])?;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if i + 1 < self.layers.len() {
                h = h.gelu();
            }
        }
        h.permute_axes(&[1, 0, 2])?
            .reshape(&[batch, self.num_blocks() * self.out_block()])
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        self.layers.iter().flat_map(BlockLinear::params).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(BlockLinear::param_count).sum()
    }

    pub fn macs(&self, batch: usize) -> u64 {
        self.layers.iter().map(|l| l.macs(batch)).sum()
    }
}

/// One [`BlockMlp`] per butterfly layer, each run between the layer's
/// permute and unpermute. Every physical data movement bumps
/// `permutation_count`: two per layer, which is the butterfly MLP's whole
/// advantage over stacking two butterfly-linear factors (four movements per
/// layer) to get the same nonlinearity.
pub struct ButterflyMlp<T: Scalar> {
    schedule: ButterflySchedule,
    blocks: Vec<BlockMlp<T>>,
    permutations: Cell<u64>,
}

impl<T: Scalar> ButterflyMlp<T> {
    /// `layer_block_dims` must start and end at the schedule radix so width
    /// is preserved across layers.
    pub fn new(schedule: ButterflySchedule, layer_block_dims: &[usize], rng: &mut DetRng) -> Result<Self> {
        let r = schedule.radix();
        if layer_block_dims.first() != Some(&r) || layer_block_dims.last() != Some(&r) {
            return Err(Error::Schedule(format!(
                "block widths {layer_block_dims:?} must start and end at the radix {r}"
            )));
        }
        let blocks = (0..schedule.layers())
            .map(|_| BlockMlp::new(schedule.n() / r, layer_block_dims, rng))
            .collect();
        Ok(Self { schedule, blocks, permutations: Cell::new(0) })
    }

    /// Hidden width `expansion * radix`; `expansion <= 1` collapses to a
    /// single affine bank per layer (a butterfly-linear factor with bias).
    pub fn with_expansion(schedule: ButterflySchedule, expansion: usize, rng: &mut DetRng) -> Result<Self> {
        let r = schedule.radix();
        let dims: Vec<usize> = if expansion <= 1 { vec![r, r] } else { vec![r, expansion * r, r] };
        Self::new(schedule, &dims, rng)
    }

    pub fn schedule(&self) -> &ButterflySchedule {
        &self.schedule
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for (i, block) in self.blocks.iter().enumerate() {
            h = self.schedule.permute(&h, i)?;
            self.permutations.set(self.permutations.get() + 1);
            h = block.forward(&h)?;
            h = self.schedule.unpermute(&h, i)?;
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
        self.blocks.iter().flat_map(BlockMlp::params).collect()
    }

    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(BlockMlp::param_count).sum()
    }

    pub fn macs(&self, batch: usize) -> u64 {
        self.blocks.iter().map(|b| b.macs(batch)).sum()
    }
}

/// Plain dense MLP over the channel axis, GELU between layers. The baseline
/// every block-sparse variant is measured against.
pub struct DenseMlp<T: Scalar> {
    weights: Vec<Tensor<T>>,
    biases: Vec<Tensor<T>>,
}

impl<T: Scalar> DenseMlp<T> {
    pub fn new(dims: &[usize], rng: &mut DetRng) -> Self {
        assert!(dims.len() >= 2, "need at least an input and an output width");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in dims.windows(2) {
            weights.push(uniform_init(&[w[0], w[1]], w[0], rng));
            biases.push(uniform_init(&[w[1]], w[0], rng));
        }
        Self { weights, biases }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            h = h.matmul(w)?.add(b)?;
            if i + 1 < self.weights.len() {
                h = h.gelu();
            }
        }
        Ok(h)
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        self.weights.iter().chain(&self.biases).cloned().collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(Tensor::len).sum()
    }

    pub fn macs(&self, batch: usize) -> u64 {
        self.weights
            .iter()
            .map(|w| {
                let s = w.shape();
                (batch * s[0] * s[1]) as u64
            })
            .sum()
    }

    pub fn weights(&self) -> &[Tensor<T>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Tensor<T>] {
        &self.biases
    }
}

impl<T: Scalar> CostAccounted for BlockMlp<T> {
    fn param_count(&self) -> usize {
        self.param_count()
    }
}

impl<T: Scalar> CostAccounted for DenseMlp<T> {
    fn param_count(&self) -> usize {
        self.param_count()
    }
}

impl<T: Scalar> CostAccounted for ButterflyMlp<T> {
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
            .map(|(i, b)| ModuleCost { name: format!("layer{i}"), params: b.param_count() })
            .collect()
    }
}
