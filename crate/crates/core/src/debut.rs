//! Deformable-butterfly factors and the two-factor densification check.
//!
//! A factor `R^(p,q)_(r,s,t)` is a `p x q` matrix of blocks along the main
//! diagonal, each block an `r x s` grid of `t x t` diagonal sub-blocks. The
//! composition validator multiplies the supports of two factors and decides
//! whether the product fills a coarser block-diagonal partition completely,
//! comparing a purely structural verdict against a numeric product with
//! random weights.

use crate::error::{Error, Result};
use crate::rng::DetRng;
use alloc::vec::Vec;

/// Structured sparsity pattern `R^(p,q)_(r,s,t)`. The matrix splits into
/// `p/(r*t)` diagonal blocks of shape `(r*t) x (s*t)`; inside a block, entry
/// `(i, j)` is admissible iff `i = j (mod t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DebutFactor {
    p: usize,
    q: usize,
    r: usize,
    s: usize,
    t: usize,
}

impl DebutFactor {
    pub fn new(p: usize, q: usize, r: usize, s: usize, t: usize) -> Result<Self> {
        if p == 0 || q == 0 || r == 0 || s == 0 || t == 0 {
            return Err(Error::Schedule("factor extents must be positive".into()));
        }
        if p % (r * t) != 0 || q % (s * t) != 0 {
            return Err(Error::Schedule(format!(
                "blocks of {}x{} do not tile a {p}x{q} matrix",
                r * t,
                s * t
            )));
        }
        if p / (r * t) != q / (s * t) {
            return Err(Error::Schedule(format!(
                "row partition gives {} diagonal blocks but column partition gives {}",
                p / (r * t),
                q / (s * t)
            )));
        }
        Ok(Self { p, q, r, s, t })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn num_diagonal_blocks(&self) -> usize {
        self.p / (self.r * self.t)
    }

    /// Whether entry `(i, j)` lies in the support.
    pub fn is_nonzero(&self, i: usize, j: usize) -> bool {
        i / (self.r * self.t) == j / (self.s * self.t) && i % self.t == j % self.t
    }

    /// Row-major `p x q` boolean support mask.
    pub fn support(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.p * self.q);
        for i in 0..self.p {
            for j in 0..self.q {
                out.push(self.is_nonzero(i, j));
            }
        }
        out
    }

    pub fn nnz(&self) -> usize {
        self.support().iter().filter(|&&b| b).count()
    }

    /// Dense `p x q` realization with weights drawn from `[0.1, 1)` on the
    /// support and exact zeros elsewhere. The lower bound keeps sums of
    /// admissible products far above the zero threshold.
    pub fn random_realization(&self, rng: &mut DetRng) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.p * self.q);
        for i in 0..self.p {
            for j in 0..self.q {
                out.push(if self.is_nonzero(i, j) { rng.uniform(0.1, 1.0) } else { 0.0 });
            }
        }
        out
    }
}

/// Verdict of [`validate_debut_composition`]. `dense_product` is the agreed
/// structural/numeric answer; the two rule fields restate the closed-form
/// predicates it is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DebutComposition {
    /// The product fills its diagonal blocks completely (structural and
    /// numeric checks both).
    pub dense_product: bool,
    /// Closed-form prediction under the strict rule `t2 = r1`.
    pub dense_original_rule: bool,
    /// Closed-form prediction under the relaxed rule `1 < t2 <= r1`.
    pub dense_relaxed_rule: bool,
    /// Verdict from the boolean support product alone.
    pub dense_structural: bool,
    /// Verdict from a random-weight product with zero threshold `1e-12`.
    pub dense_numeric: bool,
    /// Diagonal block shape the product is measured against:
    /// `(r2*r1, s2*s1)` under the strict rule, `(r2*t2, s2*t2)` otherwise.
    pub effective_partition: (usize, usize),
}

const ZERO_THRESHOLD: f64 = 1e-12;

/// Decide whether `f2 * f1` densifies into a coarser block-diagonal factor.
/// `f1` must have dense sub-blocks (`t1 = 1`) and `f2` diagonal sub-blocks
/// (`t2 > 1`); the inner extents must match. Both the boolean support
/// product and a numeric random-weight product are evaluated and must agree.
pub fn validate_debut_composition(f2: &DebutFactor, f1: &DebutFactor) -> Result<DebutComposition> {
    if f2.q != f1.p {
        return Err(Error::Incomposable(format!(
            "inner extents differ: left factor is {}x{}, right factor is {}x{}",
            f2.p, f2.q, f1.p, f1.q
        )));
    }
    if f1.t != 1 {
        return Err(Error::Incomposable(format!(
            "right factor must have dense sub-blocks (t = 1), got t = {}",
            f1.t
        )));
    }
    if f2.t <= 1 {
        return Err(Error::Incomposable(
            "left factor must have diagonal sub-blocks (t > 1)".into(),
        ));
    }

    let dense_original_rule = f2.t == f1.r;
    let dense_relaxed_rule = f2.t <= f1.r;
    let effective_partition = if dense_original_rule {
        (f2.r * f1.r, f2.s * f1.s)
    } else {
        (f2.r * f2.t, f2.s * f2.t)
    };

    let (rows, inner, cols) = (f2.p, f2.q, f1.q);
    let (s2, s1) = (f2.support(), f1.support());
    let mut structural = vec![false; rows * cols];
    for i in 0..rows {
        for k in 0..inner {
            if !s2[i * inner + k] {
                continue;
            }
            for j in 0..cols {
                structural[i * cols + j] |= s1[k * cols + j];
            }
        }
    }

    let mut rng = DetRng::new(0x0de8);
    let (w2, w1) = (f2.random_realization(&mut rng), f1.random_realization(&mut rng));
    let mut numeric = vec![0.0f64; rows * cols];
    for i in 0..rows {
        for k in 0..inner {
            let a = w2[i * inner + k];
            if a == 0.0 {
                continue;
            }
            for j in 0..cols {
                numeric[i * cols + j] += a * w1[k * cols + j];
            }
        }
    }

    let dense_at = |nonzero: &dyn Fn(usize, usize) -> bool| -> bool {
        let (br, bc) = effective_partition;
        if rows % br != 0 || cols % bc != 0 || rows / br != cols / bc {
            return false;
        }
        for i in 0..rows {
            for j in 0..cols {
                let inside = i / br == j / bc;
                if nonzero(i, j) != inside {
                    return false;
                }
            }
        }
        true
    };
    let dense_structural = dense_at(&|i, j| structural[i * cols + j]);
    let dense_numeric = dense_at(&|i, j| numeric[i * cols + j].abs() > ZERO_THRESHOLD);

    Ok(DebutComposition {
        dense_product: dense_structural && dense_numeric,
        dense_original_rule,
        dense_relaxed_rule,
        dense_structural,
        dense_numeric,
        effective_partition,
    })
}
