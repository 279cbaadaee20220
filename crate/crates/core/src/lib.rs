//! Block-sparse dimension mixing: butterfly MLPs, block attention, patch-only
//! mixers, and the analysis tools to reason about them.
//!
//! The crate is organised around three layers:
//!
//! * [`tensor`]: a dense row-major tensor with reverse-mode gradients. Every
//!   model below builds an eager compute graph out of these ops and calls
//!   [`Tensor::backward`] on a scalar loss.
//! * model structures: [`block_mlp`] (block-diagonal and butterfly MLPs),
//!   [`attention`] (transformer blocks, butterfly block attention,
//!   token-parallel attention, a small ViT), [`patch_mixer`] (MLP-Mixer and
//!   the patch-only variant).
//! * [`mixing`]: structural reachability analysis over mixing schedules, a
//!   finite-difference Jacobian probe, and cost accounting, so claims like
//!   "these two sparse layers compose to full mixing" can be checked rather
//!   than assumed.
//!
//! Everything is deterministic given a seed: weight init and data order come
//! from [`rng::DetRng`], and all kernels run with a fixed reduction order.
//!
//! The crate is `no_std`-compatible (with `alloc`) when built without the
//! default `std` feature; the std build routes large matrix products through
//! `matrixmultiply`.

#![cfg_attr(not(feature = "std"), no_std)]

#[macro_use]
extern crate alloc;

pub mod attention;
pub mod block_mlp;
pub mod butterfly;
pub mod counters;
pub mod debut;
pub mod error;
mod fastmath;
mod gemm;
pub mod mixing;
pub mod optim;
pub mod patch_mixer;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::DetRng;
pub use scalar::Scalar;
pub use tensor::Tensor;
