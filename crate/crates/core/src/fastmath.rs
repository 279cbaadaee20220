//! Single-precision exp and tanh as short inlinable polynomials.
//!
//! `libm` calls cannot be vectorized by the compiler, and training spends a
//! large share of its time inside softmax and gelu loops. These versions are
//! plain f32 arithmetic plus exponent-bit assembly, so LLVM can unroll and
//! vectorize the surrounding loops. They are deterministic: the same input
//! gives the same bits on every build, std or not.
//!
//! Accuracy is ~2 ulp for exp over the finite range and ~1e-7 absolute for
//! tanh, which is at the noise floor of f32 training arithmetic. The f64
//! scalar keeps full-precision libm so verification code is unaffected.

/// exp(x) for f32, saturating: inputs are clamped to [-87.3, 88.0], so deep
/// negatives give ~1e-38 instead of 0 and huge positives give ~1.7e38
/// instead of inf. NaN propagates. Branch-free, all-float except one cast,
/// so the loops around it vectorize even at the baseline instruction set.
#[inline]
pub(crate) fn exp_f32(x: f32) -> f32 {
    const LOG2_E: f32 = core::f32::consts::LOG2_E;
    // ln 2 split so that n * LN2_HI is exact for |n| < 2^15.
    const LN2_HI: f32 = 0.693_359_375;
    const LN2_LO: f32 = -2.121_944_4e-4;
    // Adding 1.5 * 2^23 forces round-to-nearest on the low bits.
    const ROUND_MAGIC: f32 = 12_582_912.0;
    let x = x.clamp(-87.336_54, 88.0);
    let n = (x * LOG2_E + ROUND_MAGIC) - ROUND_MAGIC;
    let r = (x - n * LN2_HI) - n * LN2_LO;
    // Taylor to degree 6; |r| <= ln2 / 2 keeps the truncation under 2 ulp.
    let p = 1.0
        + r * (1.0
            + r * (0.5
                + r * (1.0 / 6.0
                    + r * (1.0 / 24.0 + r * (1.0 / 120.0 + r * (1.0 / 720.0))))));
    // n is in [-126, 127], so 2^n assembles directly in the exponent bits:
    // (n + 127) * 2^23 is exact and the cast is in range.
    let scale = f32::from_bits(((n + 127.0) * 8_388_608.0) as u32);
    p * scale
}

/// tanh(x) for f32 via exp(2x). tanh(9.02) already rounds to 1.0 in f32,
/// so clamping the argument changes nothing representable.
#[inline]
pub(crate) fn tanh_f32(x: f32) -> f32 {
    let t = exp_f32(2.0 * x.clamp(-9.02, 9.02));
    (t - 1.0) / (t + 1.0)
}
