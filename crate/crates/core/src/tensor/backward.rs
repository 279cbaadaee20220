//! Reverse-mode pass. `backward` walks the recorded graph once in reverse
//! topological order, streaming gradient buffers through a map keyed by node
//! identity, and deposits the final gradients on `requires_grad` leaves.

use super::shape::{axis_split, broadcast_strides, for_each_2, strides};
use super::{Op, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

type Grads<T> = BTreeMap<usize, Vec<T>>;

fn take_buf<T: Scalar>(grads: &mut Grads<T>, p: &Tensor<T>) -> Vec<T> {
    grads.remove(&p.ptr_id()).unwrap_or_else(|| vec![T::ZERO; p.len()])
}

fn put_buf<T: Scalar>(grads: &mut Grads<T>, p: &Tensor<T>, buf: Vec<T>) {
    grads.insert(p.ptr_id(), buf);
}

/// Accumulate `g` (laid out over `out_shape`) into `p`, undoing broadcast by
/// summing over expanded axes. `weight(i, oa, ob)` maps the incoming gradient
/// element to this operand's contribution; `other_offsets` supplies the
/// second strided offset (used by `mul`, which needs the other operand).
fn binary_back<T: Scalar>(
    grads: &mut Grads<T>,
    out_shape: &[usize],
    p: &Tensor<T>,
    other_shape: &[usize],
    weight: impl Fn(usize, usize, usize) -> T,
) {
    if !p.requires_grad() {
        return;
    }
    let mut buf = take_buf(grads, p);
    let pshape = p.shape();
    let sp = broadcast_strides(&pshape, out_shape);
    let so = broadcast_strides(other_shape, out_shape);
    let mut i = 0usize;
    for_each_2(out_shape, &sp, &so, |op_, oo| {
        buf[op_] += weight(i, op_, oo);
        i += 1;
    });
    put_buf(grads, p, buf);
}

/// Post-order over the `requires_grad` subgraph; reversed, it yields every
/// consumer before its producers.
fn topo<T: Scalar>(root: &Tensor<T>) -> Vec<Tensor<T>> {
    let mut order = Vec::new();
    let mut visited: BTreeSet<usize> = BTreeSet::new();
    let mut stack = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !visited.insert(t.ptr_id()) {
            continue;
        }
        stack.push((t.clone(), true));
        for p in t.node().op.parents() {
            if p.requires_grad() && !visited.contains(&p.ptr_id()) {
                stack.push((p, false));
            }
        }
    }
    order
}

impl<T: Scalar> Tensor<T> {
    /// Back-propagate from this scalar. Gradients accumulate into the `grad`
    /// of every `requires_grad` leaf that feeds it. Each output may be
    /// back-propagated once; rebuild the graph for another pass.
    pub fn backward(&self) -> Result<()> {
        {
            let mut n = self.inner.borrow_mut();
            if n.data.len() != 1 {
                return Err(Error::NotScalarLoss { shape: n.shape.clone() });
            }
            if n.back_done {
                return Err(Error::GraphReuse);
            }
            if !n.requires_grad {
                return Err(Error::NoGrad("loss (nothing that feeds it requires a gradient)"));
            }
            n.back_done = true;
        }

        let order = topo(self);
        let mut grads: Grads<T> = BTreeMap::new();
        grads.insert(self.ptr_id(), vec![T::ONE]);

        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.ptr_id()) else { continue };
            let node = t.node();
            let out_shape = node.shape.clone();
            match &node.op {
                Op::Leaf => {
                    drop(node);
                    let mut n = t.inner.borrow_mut();
                    match n.grad.as_mut() {
                        Some(acc) => {
                            for (a, gi) in acc.iter_mut().zip(&g) {
                                *a += *gi;
                            }
                        }
                        None => n.grad = Some(g),
                    }
                }
                Op::Add(a, b) => {
                    binary_back(&mut grads, &out_shape, a, &b.shape(), |i, _, _| g[i]);
                    binary_back(&mut grads, &out_shape, b, &a.shape(), |i, _, _| g[i]);
                }
                Op::Sub(a, b) => {
                    binary_back(&mut grads, &out_shape, a, &b.shape(), |i, _, _| g[i]);
                    binary_back(&mut grads, &out_shape, b, &a.shape(), |i, _, _| -g[i]);
                }
                Op::Mul(a, b) => {
                    {
                        let bn = b.node();
                        binary_back(&mut grads, &out_shape, a, &bn.shape, |i, _, oo| g[i] * bn.data[oo]);
                    }
                    let an = a.node();
                    binary_back(&mut grads, &out_shape, b, &an.shape, |i, _, oo| g[i] * an.data[oo]);
                }
                Op::Neg(a) => {
                    if a.requires_grad() {
                        let mut buf = take_buf(&mut grads, a);
                        for (bi, gi) in buf.iter_mut().zip(&g) {
                            *bi -= *gi;
                        }
                        put_buf(&mut grads, a, buf);
                    }
                }
                Op::Scale(a, c) => {
                    if a.requires_grad() {
                        let mut buf = take_buf(&mut grads, a);
                        for (bi, gi) in buf.iter_mut().zip(&g) {
                            *bi += *c * *gi;
                        }
                        put_buf(&mut grads, a, buf);
                    }
                }
                Op::Matmul(a, b) => {
                    let (m, k) = {
                        let s = a.shape();
                        (s[0], s[1])
                    };
                    let n = b.shape()[1];
                    if a.requires_grad() {
                        let mut buf = take_buf(&mut grads, a);
                        T::gemm_nt(m, n, k, &g, &b.node().data, &mut buf);
                        put_buf(&mut grads, a, buf);
                    }
                    if b.requires_grad() {
                        let mut buf = take_buf(&mut grads, b);
                        T::gemm_tn(m, k, n, &a.node().data, &g, &mut buf);
                        put_buf(&mut grads, b, buf);
                    }
                }
                Op::BatchMatmul(a, b) => {
                    let sa = a.shape();
                    let sb = b.shape();
                    let r = sa.len();
                    let batch: usize = sa[..r - 2].iter().product();
                    let (m, k, n) = (sa[r - 2], sa[r - 1], sb[r - 1]);
                    if a.requires_grad() {
                        let bn = b.node();
                        let mut buf = take_buf(&mut grads, a);
                        for s in 0..batch {
                            T::gemm_nt(
                                m,
                                n,
                                k,
                                &g[s * m * n..(s + 1) * m * n],
                                &bn.data[s * k * n..(s + 1) * k * n],
                                &mut buf[s * m * k..(s + 1) * m * k],
                            );
                        }
                        drop(bn);
                        put_buf(&mut grads, a, buf);
                    }
                    if b.requires_grad() {
                        let an = a.node();
                        let mut buf = take_buf(&mut grads, b);
                        for s in 0..batch {
                            T::gemm_tn(
                                m,
                                k,
                                n,
                                &an.data[s * m * k..(s + 1) * m * k],
                                &g[s * m * n..(s + 1) * m * n],
                                &mut buf[s * k * n..(s + 1) * k * n],
                            );
                        }
                        drop(an);
                        put_buf(&mut grads, b, buf);
                    }
                }
                Op::Reshape(a) => {
                    if a.requires_grad() {
                        let mut buf = take_buf(&mut grads, a);
                        for (bi, gi) in buf.iter_mut().zip(&g) {
                            *bi += *gi;
                        }
                        put_buf(&mut grads, a, buf);
                    }
                }
                Op::Permute(a, perm) => {
                    if a.requires_grad() {
                        // walk output positions exactly like the forward did;
                        // scatter-add back to the source offsets
                        let src_st = strides(&a.shape());
                        let step: Vec<usize> = perm.iter().map(|&p| src_st[p]).collect();
                        let zero = vec![0usize; out_shape.len()];
                        let mut buf = take_buf(&mut grads, a);
                        let mut i = 0usize;
                        for_each_2(&out_shape, &step, &zero, |off, _| {
                            buf[off] += g[i];
                            i += 1;
                        });
                        put_buf(&mut grads, a, buf);
                    }
                }
                Op::Gelu(a, tanh_u) => {
                    if a.requires_grad() {
                        let an = a.node();
                        let c = T::from_f64(0.797_884_560_802_865_4);
                        let three_k3 = T::from_f64(3.0 * 0.044_715);
                        let half = T::from_f64(0.5);
                        let mut buf = take_buf(&mut grads, a);
                        for j in 0..buf.len() {
                            let x = an.data[j];
                            let t = tanh_u[j];
                            let du = c * (T::ONE + three_k3 * x * x);
                            let dy = half * (T::ONE + t) + half * x * (T::ONE - t * t) * du;
                            buf[j] += g[j] * dy;
                        }
                        drop(an);
                        put_buf(&mut grads, a, buf);
                    }
                }
                Op::Softmax(a, axis) => {
                    if a.requires_grad() {
                        let y = &node.data;
                        let (outer, ax, inner) = axis_split(&out_shape, *axis);
                        let mut buf = take_buf(&mut grads, a);
                        if inner == 1 {
                            for o in 0..outer {
                                let yr = &y[o * ax..(o + 1) * ax];
                                let gr = &g[o * ax..(o + 1) * ax];
                                let br = &mut buf[o * ax..(o + 1) * ax];
                                let mut dot = T::ZERO;
                                for (&yj, &gj) in yr.iter().zip(gr) {
                                    dot += gj * yj;
                                }
                                for ((bj, &yj), &gj) in br.iter_mut().zip(yr).zip(gr) {
                                    *bj += yj * (gj - dot);
                                }
                            }
                        } else {
                            for o in 0..outer {
                                for i in 0..inner {
                                    let base = o * ax * inner + i;
                                    let mut dot = T::ZERO;
                                    for s in 0..ax {
                                        let j = base + s * inner;
                                        dot += g[j] * y[j];
                                    }
                                    for s in 0..ax {
                                        let j = base + s * inner;
                                        buf[j] += y[j] * (g[j] - dot);
                                    }
                                }
                            }
                        }
                        put_buf(&mut grads, a, buf);
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    axis,
                    xhat,
                    inv_std,
                } => {
                    let (outer, ax, inner) = axis_split(&out_shape, *axis);
                    let gn = gain.node();
                    if gain.requires_grad() {
                        let mut buf = take_buf(&mut grads, gain);
                        for o in 0..outer {
                            for s in 0..ax {
                                for i in 0..inner {
                                    let j = (o * ax + s) * inner + i;
                                    buf[s] += g[j] * xhat[j];
                                }
                            }
                        }
                        put_buf(&mut grads, gain, buf);
                    }
                    if bias.requires_grad() {
                        let mut buf = take_buf(&mut grads, bias);
                        for o in 0..outer {
                            for s in 0..ax {
                                for i in 0..inner {
                                    buf[s] += g[(o * ax + s) * inner + i];
                                }
                            }
                        }
                        put_buf(&mut grads, bias, buf);
                    }
                    if x.requires_grad() {
                        let inv_n = T::from_f64(1.0 / ax as f64);
                        let mut buf = take_buf(&mut grads, x);
                        for o in 0..outer {
                            for i in 0..inner {
                                let base = o * ax * inner + i;
                                let mut m1 = T::ZERO;
                                let mut m2 = T::ZERO;
                                for s in 0..ax {
                                    let j = base + s * inner;
                                    let dxh = g[j] * gn.data[s];
                                    m1 += dxh;
                                    m2 += dxh * xhat[j];
                                }
                                m1 *= inv_n;
                                m2 *= inv_n;
                                let inv = inv_std[o * inner + i];
                                for s in 0..ax {
                                    let j = base + s * inner;
                                    let dxh = g[j] * gn.data[s];
                                    buf[j] += inv * (dxh - m1 - xhat[j] * m2);
                                }
                            }
                        }
                        put_buf(&mut grads, x, buf);
                    }
                }
                Op::SumAll(a) => {
                    if a.requires_grad() {
                        let mut buf = take_buf(&mut grads, a);
                        for bi in buf.iter_mut() {
                            *bi += g[0];
                        }
                        put_buf(&mut grads, a, buf);
                    }
                }
                Op::MeanAxis(a, axis) => {
                    if a.requires_grad() {
                        let ashape = a.shape();
                        let (outer, ax, inner) = axis_split(&ashape, *axis);
                        let inv = T::from_f64(1.0 / ax as f64);
                        let mut buf = take_buf(&mut grads, a);
                        for o in 0..outer {
                            for s in 0..ax {
                                let dst = (o * ax + s) * inner;
                                let src = o * inner;
                                for i in 0..inner {
                                    buf[dst + i] += g[src + i] * inv;
                                }
                            }
                        }
                        put_buf(&mut grads, a, buf);
                    }
                }
                Op::Narrow { x, axis, start, len } => {
                    if x.requires_grad() {
                        let xshape = x.shape();
                        let (outer, ax, inner) = axis_split(&xshape, *axis);
                        let mut buf = take_buf(&mut grads, x);
                        for o in 0..outer {
                            for s in 0..*len {
                                let dst = (o * ax + start + s) * inner;
                                let src = (o * len + s) * inner;
                                for i in 0..inner {
                                    buf[dst + i] += g[src + i];
                                }
                            }
                        }
                        put_buf(&mut grads, x, buf);
                    }
                }
                Op::Concat(parts, axis) => {
                    let (outer, total_ax, inner) = axis_split(&out_shape, *axis);
                    let mut offset = 0usize;
                    for p in parts {
                        let ext = p.shape()[*axis];
                        if p.requires_grad() {
                            let mut buf = take_buf(&mut grads, p);
                            for o in 0..outer {
                                for s in 0..ext {
                                    let src = (o * total_ax + offset + s) * inner;
                                    let dst = (o * ext + s) * inner;
                                    for i in 0..inner {
                                        buf[dst + i] += g[src + i];
                                    }
                                }
                            }
                            put_buf(&mut grads, p, buf);
                        }
                        offset += ext;
                    }
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    if logits.requires_grad() {
                        let cols = logits.shape()[1];
                        let scale = g[0] * T::from_f64(1.0 / labels.len() as f64);
                        let mut buf = take_buf(&mut grads, logits);
                        for (r, &y) in labels.iter().enumerate() {
                            for c in 0..cols {
                                let j = r * cols + c;
                                let delta = if c == y { T::ONE } else { T::ZERO };
                                buf[j] += scale * (probs[j] - delta);
                            }
                        }
                        put_buf(&mut grads, logits, buf);
                    }
                }
            }
        }
        Ok(())
    }
}
