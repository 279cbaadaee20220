//! Butterfly index arithmetic: strides, permutations, and the mixing units
//! they induce.
//!
//! A butterfly pass over `n` channels with radix `r` runs `ceil(log_r n)`
//! layers. Each layer permutes the channels so that positions `stride` apart
//! land next to each other, then mixes within contiguous blocks of `r`. The
//! stride is `r^i` for layer `i` while `r^(i+1) <= n`, and `n / r` on the
//! final layer, so the blocks of successive layers interleave and every
//! channel can reach every other after all layers.
//!
//! Not every width admits this: regrouping at stride `s` carves the channel
//! axis into chunks of `r * s`, which must tile `n` exactly at every layer.
//! That holds precisely when `n = c * r^k` with `1 <= c < r`, and
//! [`ButterflySchedule::new`] rejects anything else.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use alloc::vec::Vec;

/// Number of butterfly layers needed to span `n` channels with radix
/// `radix`: the smallest `L` with `radix^L >= n`.
pub fn num_butterfly_layers(n: usize, radix: usize) -> usize {
    assert!(radix >= 2, "radix must be at least 2");
    let mut layers = 0;
    let mut p = 1u128;
    while p < n as u128 {
        p *= radix as u128;
        layers += 1;
    }
    layers
}

/// Stride of butterfly layer `layer`: `radix^layer` while the next power
/// still fits in `n`, otherwise `n / radix`.
pub fn compute_stride(n: usize, radix: usize, layer: usize) -> usize {
    assert!(radix >= 2, "radix must be at least 2");
    match (radix as u128).checked_pow(layer as u32 + 1) {
        Some(p) if p <= n as u128 => (p / radix as u128) as usize,
        _ => n / radix,
    }
}

/// Mixing units for a free-form (block, stride) pair over `n` channels:
/// `n / block` groups of `block` indices spaced `stride` apart. Works for
/// any pair with `block * stride` dividing `n`, not only strides that occur
/// in a full plan.
pub fn strided_units(n: usize, block: usize, stride: usize) -> Result<Vec<Vec<usize>>> {
    if block == 0 || stride == 0 || n % (block * stride) != 0 {
        return Err(Error::Schedule(format!(
            "blocks of {block} channels at stride {stride} do not tile width {n}"
        )));
    }
    let mut out = Vec::with_capacity(n / block);
    for g in 0..n / (block * stride) {
        for si in 0..stride {
            out.push((0..block).map(|b| g * block * stride + b * stride + si).collect());
        }
    }
    Ok(out)
}

/// A validated butterfly plan for a fixed width and radix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ButterflySchedule {
    n: usize,
    radix: usize,
    strides: Vec<usize>,
}

impl ButterflySchedule {
    pub fn new(n: usize, radix: usize) -> Result<Self> {
        if radix < 2 {
            return Err(Error::Schedule(format!("radix {radix} must be at least 2")));
        }
        if n < radix {
            return Err(Error::Schedule(format!(
                "width {n} is smaller than radix {radix}; one block cannot even fill"
            )));
        }
        let mut p = 1usize;
        let mut k = 0u32;
        while p <= n / radix {
            p *= radix;
            k += 1;
        }
        if n % p != 0 {
            return Err(Error::Schedule(format!(
                "width {n} is not a multiple of {radix}^{k} = {p}; \
                 blocks of {radix}*stride cannot tile it at every layer"
            )));
        }
        let layers = num_butterfly_layers(n, radix);
        let strides = (0..layers).map(|i| compute_stride(n, radix, i)).collect();
        Ok(Self { n, radix, strides })
    }

    /// A schedule truncated to the first `layers` strides. Such a plan mixes
    /// only `radix^layers` channels into each output; [`is_partial`]
    /// (Self::is_partial) reports whether it falls short of complete mixing.
    pub fn with_layers(n: usize, radix: usize, layers: usize) -> Result<Self> {
        let full = Self::new(n, radix)?;
        if layers == 0 || layers > full.layers() {
            return Err(Error::Schedule(format!(
                "layer count {layers} outside 1..={} for width {n} radix {radix}",
                full.layers()
            )));
        }
        Ok(Self { strides: full.strides[..layers].to_vec(), ..full })
    }

    pub fn is_partial(&self) -> bool {
        self.strides.len() < num_butterfly_layers(self.n, self.radix)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn radix(&self) -> usize {
        self.radix
    }

    pub fn layers(&self) -> usize {
        self.strides.len()
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    /// Stride of one layer. Panics if `layer >= self.layers()`.
    pub fn stride(&self, layer: usize) -> usize {
        self.strides[layer]
    }

    /// Where channel `j` lands after the permutation of `layer`.
    ///
    /// Writing `j = g*(r*s) + b*s + si` with `b < r`, `si < s`, the channel
    /// moves to `g*(r*s) + si*r + b`: the `r` channels `s` apart that share
    /// `(g, si)` become one contiguous block.
    pub fn permuted_index(&self, layer: usize, j: usize) -> usize {
        let r = self.radix;
        let s = self.stride(layer);
        let g = j / (r * s);
        let rem = j % (r * s);
        let b = rem / s;
        let si = rem % s;
        g * r * s + si * r + b
    }

    /// The mixing units of one layer: `n / r` groups of `r` channel indices
    /// (in pre-permutation numbering) that the block mix of this layer
    /// combines. Unit `u` occupies permuted positions `u*r .. (u+1)*r`.
    pub fn units(&self, layer: usize) -> Vec<Vec<usize>> {
        strided_units(self.n, self.radix, self.stride(layer)).expect("schedule is valid")
    }

    /// Apply the layer's permutation along the last axis of `x` (which must
    /// have extent `n`). Built from reshape and transpose, so gradients flow.
    pub fn permute<T: Scalar>(&self, x: &Tensor<T>, layer: usize) -> Result<Tensor<T>> {
        self.regroup(x, layer, false)
    }

    /// Inverse of [`permute`](Self::permute) for the same layer.
    pub fn unpermute<T: Scalar>(&self, x: &Tensor<T>, layer: usize) -> Result<Tensor<T>> {
        self.regroup(x, layer, true)
    }

    fn regroup<T: Scalar>(&self, x: &Tensor<T>, layer: usize, invert: bool) -> Result<Tensor<T>> {
        let shape = x.shape();
        let last = *shape.last().ok_or_else(|| {
            Error::Schedule("cannot permute the last axis of a rank-0 tensor".into())
        })?;
        if last != self.n {
            return Err(Error::Schedule(format!(
                "last axis has extent {last} but the schedule was built for {}",
                self.n
            )));
        }
        let r = self.radix;
        let s = self.stride(layer);
        let groups = self.n / (r * s);
        let prefix: usize = shape[..shape.len() - 1].iter().product();
        let (a, b) = if invert { (s, r) } else { (r, s) };
        x.reshape(&[prefix, groups, a, b])?
            .permute_axes(&[0, 1, 3, 2])?
            .reshape(&shape)
    }
}
