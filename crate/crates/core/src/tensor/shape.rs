//! Row-major shape arithmetic: strides, broadcasting, and strided traversal
//! shared by the elementwise ops and their backward rules.

use crate::error::{Error, Result};
use alloc::vec::Vec;

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut st = vec![0usize; shape.len()];
    let mut acc = 1;
    for (s, &e) in st.iter_mut().rev().zip(shape.iter().rev()) {
        *s = acc;
        acc *= e;
    }
    st
}

/// Shape of `a op b` under right-aligned broadcasting (each trailing pair of
/// extents must match or one of them must be 1).
pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let ea = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let eb = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if ea == eb {
            ea
        } else if ea == 1 {
            eb
        } else if eb == 1 {
            ea
        } else {
            return Err(Error::ShapeMismatch {
                op,
                left: a.to_vec(),
                right: b.to_vec(),
            });
        };
    }
    Ok(out)
}

/// Strides for reading `shape` as if it were `out` (0 on broadcast axes,
/// left-padded to the output rank).
pub(crate) fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let pad = out.len() - shape.len();
    let mut st = vec![0usize; out.len()];
    for i in 0..shape.len() {
        st[pad + i] = if shape[i] == 1 { 0 } else { own[i] };
    }
    st
}

/// Walks every position of `shape` in row-major order, maintaining two
/// strided offsets. `f(oa, ob)` is called once per position.
pub(crate) fn for_each_2<F: FnMut(usize, usize)>(shape: &[usize], sa: &[usize], sb: &[usize], mut f: F) {
    let total: usize = shape.iter().product();
    if total == 0 {
        return;
    }
    let rank = shape.len();
    if rank == 0 {
        f(0, 0);
        return;
    }
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    for _ in 0..total {
        f(oa, ob);
        // odometer increment from the innermost axis outwards
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            idx[ax] = 0;
            oa -= sa[ax] * shape[ax];
            ob -= sb[ax] * shape[ax];
        }
    }
}

/// Splits a shape at `axis` into (product before, extent, product after).
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
