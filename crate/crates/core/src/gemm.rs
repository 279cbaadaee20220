//! Matrix product kernels. The std build hands large products to
//! `matrixmultiply`; tiny block shapes (butterfly blocks are often 8x8) stay
//! on a plain loop nest because packing overhead would dominate there. The
//! no_std build always uses the loop nest.
//!
//! Both kernels accumulate (`c += a * b`) and pick their path from the shape
//! alone, so a given shape always takes the same code path and results are
//! bitwise reproducible run to run.

/// Below this many multiply-adds the loop nest beats the packed kernel.
#[cfg(feature = "std")]
const TINY: usize = 8192;

pub(crate) fn naive<T: crate::Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (l, &ail) in arow.iter().enumerate() {
            let brow = &b[l * n..(l + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj += ail * bj;
            }
        }
    }
}

/// `c[m,n] += a[m,k] * b^T` with `b` stored row-major as `[n,k]`. Saves the
/// gradient passes from materializing transposed copies.
pub(crate) fn naive_nt<T: crate::Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (j, cj) in crow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = T::ZERO;
            for (&x, &y) in arow.iter().zip(brow) {
                s += x * y;
            }
            *cj += s;
        }
    }
}

/// `c[k,n] += a^T * g` with `a` stored row-major as `[m,k]` and `g` as `[m,n]`.
pub(crate) fn naive_tn<T: crate::Scalar>(m: usize, k: usize, n: usize, a: &[T], g: &[T], c: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let grow = &g[i * n..(i + 1) * n];
        for (l, &ail) in arow.iter().enumerate() {
            let crow = &mut c[l * n..(l + 1) * n];
            for (cj, &gj) in crow.iter_mut().zip(grow) {
                *cj += ail * gj;
            }
        }
    }
}

#[cfg(feature = "std")]
pub(crate) fn sgemm(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    debug_assert!(a.len() == m * k && b.len() == k * n && c.len() == m * n);
    if m * k * n < TINY {
        naive(m, k, n, a, b, c);
        return;
    }
    // SAFETY: the buffers are exactly m*k, k*n and m*n long (asserted above)
    // and the row-major strides passed here describe them without aliasing.
    unsafe {
        matrixmultiply::sgemm(
            m, k, n, 1.0,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), n as isize, 1,
            1.0,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

#[cfg(not(feature = "std"))]
pub(crate) fn sgemm(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    naive(m, k, n, a, b, c);
}

#[cfg(feature = "std")]
pub(crate) fn dgemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert!(a.len() == m * k && b.len() == k * n && c.len() == m * n);
    if m * k * n < TINY {
        naive(m, k, n, a, b, c);
        return;
    }
    // SAFETY: see sgemm.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), n as isize, 1,
            1.0,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

#[cfg(not(feature = "std"))]
pub(crate) fn dgemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    naive(m, k, n, a, b, c);
}

macro_rules! strided_variants {
    ($nt:ident, $tn:ident, $ty:ty, $mm:path) => {
        #[cfg(feature = "std")]
        pub(crate) fn $nt(m: usize, k: usize, n: usize, a: &[$ty], b: &[$ty], c: &mut [$ty]) {
            debug_assert!(a.len() == m * k && b.len() == n * k && c.len() == m * n);
            if m * k * n < TINY {
                naive_nt(m, k, n, a, b, c);
                return;
            }
            // SAFETY: buffer lengths asserted above; b is addressed through
            // transposed strides (row stride 1, column stride k) which stay
            // inside its n*k elements.
            unsafe {
                $mm(
                    m, k, n, 1.0,
                    a.as_ptr(), k as isize, 1,
                    b.as_ptr(), 1, k as isize,
                    1.0,
                    c.as_mut_ptr(), n as isize, 1,
                );
            }
        }

        #[cfg(not(feature = "std"))]
        pub(crate) fn $nt(m: usize, k: usize, n: usize, a: &[$ty], b: &[$ty], c: &mut [$ty]) {
            naive_nt(m, k, n, a, b, c);
        }

        #[cfg(feature = "std")]
        pub(crate) fn $tn(m: usize, k: usize, n: usize, a: &[$ty], g: &[$ty], c: &mut [$ty]) {
            debug_assert!(a.len() == m * k && g.len() == m * n && c.len() == k * n);
            if m * k * n < TINY {
                naive_tn(m, k, n, a, g, c);
                return;
            }
            // SAFETY: as above; a is addressed through transposed strides.
            unsafe {
                $mm(
                    k, m, n, 1.0,
                    a.as_ptr(), 1, k as isize,
                    g.as_ptr(), n as isize, 1,
                    1.0,
                    c.as_mut_ptr(), n as isize, 1,
                );
            }
        }

        #[cfg(not(feature = "std"))]
        pub(crate) fn $tn(m: usize, k: usize, n: usize, a: &[$ty], g: &[$ty], c: &mut [$ty]) {
            naive_tn(m, k, n, a, g, c);
        }
    };
}

strided_variants!(sgemm_nt, sgemm_tn, f32, matrixmultiply::sgemm);
strided_variants!(dgemm_nt, dgemm_tn, f64, matrixmultiply::dgemm);
