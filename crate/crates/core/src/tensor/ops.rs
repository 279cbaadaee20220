//! Forward ops. Each validates shapes, computes the result eagerly, and
//! records the parents plus whatever the backward rule will need.

use super::shape::{axis_split, broadcast_shape, broadcast_strides, for_each_2, strides};
use super::{Op, Tensor};
use crate::counters;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use alloc::vec::Vec;

const LN_EPS: f64 = 1e-5;

impl<T: Scalar> Tensor<T> {
    fn rg2(&self, other: &Tensor<T>) -> bool {
        self.requires_grad() || other.requires_grad()
    }

    fn binary(&self, other: &Tensor<T>, name: &'static str, f: impl Fn(T, T) -> T) -> Result<(Vec<usize>, Vec<T>)> {
        let (an, bn) = (self.node(), other.node());
        if an.shape == bn.shape {
            let data = an.data.iter().zip(&bn.data).map(|(&a, &b)| f(a, b)).collect();
            return Ok((an.shape.clone(), data));
        }
        let out = broadcast_shape(name, &an.shape, &bn.shape)?;
        let sa = broadcast_strides(&an.shape, &out);
        let sb = broadcast_strides(&bn.shape, &out);
        let mut data = Vec::with_capacity(out.iter().product());
        for_each_2(&out, &sa, &sb, |oa, ob| data.push(f(an.data[oa], bn.data[ob])));
        Ok((out, data))
    }

    /// Elementwise sum with right-aligned broadcasting.
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (shape, data) = self.binary(other, "add", |a, b| a + b)?;
        Ok(Tensor::from_node(shape, data, self.rg2(other), Op::Add(self.clone(), other.clone())))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (shape, data) = self.binary(other, "sub", |a, b| a - b)?;
        Ok(Tensor::from_node(shape, data, self.rg2(other), Op::Sub(self.clone(), other.clone())))
    }

    /// Elementwise product with right-aligned broadcasting.
    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (shape, data) = self.binary(other, "mul", |a, b| a * b)?;
        Ok(Tensor::from_node(shape, data, self.rg2(other), Op::Mul(self.clone(), other.clone())))
    }

    pub fn neg(&self) -> Tensor<T> {
        let n = self.node();
        let data = n.data.iter().map(|&v| -v).collect();
        Tensor::from_node(n.shape.clone(), data, n.requires_grad, Op::Neg(self.clone()))
    }

    /// Multiply every element by a constant (the constant is not a graph node).
    pub fn scale(&self, c: T) -> Tensor<T> {
        let n = self.node();
        let data = n.data.iter().map(|&v| v * c).collect();
        Tensor::from_node(n.shape.clone(), data, n.requires_grad, Op::Scale(self.clone(), c))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (an, bn) = (self.node(), other.node());
        let ok = an.shape.len() == 2 && bn.shape.len() == 2 && an.shape[1] == bn.shape[0];
        if !ok {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: an.shape.clone(),
                right: bn.shape.clone(),
            });
        }
        let (m, k, n) = (an.shape[0], an.shape[1], bn.shape[1]);
        let mut data = vec![T::ZERO; m * n];
        T::gemm(m, k, n, &an.data, &bn.data, &mut data);
        counters::add_macs((m * k * n) as u64);
        drop((an, bn));
        Ok(Tensor::from_node(
            vec![m, n],
            data,
            self.rg2(other),
            Op::Matmul(self.clone(), other.clone()),
        ))
    }

    /// `[..., m, k] x [..., k, n] -> [..., m, n]` with identical leading dims.
    pub fn batched_matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.batched_matmul_counted(other, false)
    }

    pub(crate) fn batched_matmul_counted(&self, other: &Tensor<T>, score: bool) -> Result<Tensor<T>> {
        let (an, bn) = (self.node(), other.node());
        let (ra, rb) = (an.shape.len(), bn.shape.len());
        let ok = ra >= 3
            && ra == rb
            && an.shape[..ra - 2] == bn.shape[..rb - 2]
            && an.shape[ra - 1] == bn.shape[rb - 2];
        if !ok {
            return Err(Error::ShapeMismatch {
                op: "batched_matmul",
                left: an.shape.clone(),
                right: bn.shape.clone(),
            });
        }
        let batch: usize = an.shape[..ra - 2].iter().product();
        let (m, k, n) = (an.shape[ra - 2], an.shape[ra - 1], bn.shape[rb - 1]);
        let mut data = vec![T::ZERO; batch * m * n];
        for b in 0..batch {
            T::gemm(
                m,
                k,
                n,
                &an.data[b * m * k..(b + 1) * m * k],
                &bn.data[b * k * n..(b + 1) * k * n],
                &mut data[b * m * n..(b + 1) * m * n],
            );
        }
        let macs = (batch * m * k * n) as u64;
        counters::add_macs(macs);
        if score {
            counters::add_score_macs(macs);
        }
        let mut shape = an.shape[..ra - 2].to_vec();
        shape.push(m);
        shape.push(n);
        drop((an, bn));
        Ok(Tensor::from_node(
            shape,
            data,
            self.rg2(other),
            Op::BatchMatmul(self.clone(), other.clone()),
        ))
    }

    /// Same elements, new shape (always a copy, data order unchanged).
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor<T>> {
        let n = self.node();
        if new_shape.iter().product::<usize>() != n.data.len() {
            return Err(Error::InvalidReshape {
                from: n.shape.clone(),
                to: new_shape.to_vec(),
            });
        }
        Ok(Tensor::from_node(
            new_shape.to_vec(),
            n.data.clone(),
            n.requires_grad,
            Op::Reshape(self.clone()),
        ))
    }

    /// Materialized axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute_axes(&self, perm: &[usize]) -> Result<Tensor<T>> {
        let n = self.node();
        let rank = n.shape.len();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || core::mem::replace(&mut seen[p], true)) {
            return Err(Error::ShapeMismatch {
                op: "permute_axes",
                left: n.shape.clone(),
                right: perm.to_vec(),
            });
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| n.shape[p]).collect();
        let src_st = strides(&n.shape);
        let step: Vec<usize> = perm.iter().map(|&p| src_st[p]).collect();
        let total = n.data.len();
        let mut data = Vec::with_capacity(total);
        if rank == 0 || perm.iter().enumerate().all(|(i, &p)| i == p) {
            data.extend_from_slice(&n.data);
        } else if perm[rank - 1] == rank - 1 {
            // the innermost axis stays put, so whole rows can be memcpy'd
            let run = n.shape[rank - 1];
            let zero = vec![0usize; rank - 1];
            for_each_2(&out_shape[..rank - 1], &step[..rank - 1], &zero, |off, _| {
                data.extend_from_slice(&n.data[off..off + run]);
            });
        } else {
            let zero = vec![0usize; rank];
            for_each_2(&out_shape, &step, &zero, |off, _| data.push(n.data[off]));
        }
        Ok(Tensor::from_node(
            out_shape,
            data,
            n.requires_grad,
            Op::Permute(self.clone(), perm.to_vec()),
        ))
    }

    /// Swap two axes (materialized).
    pub fn transpose(&self, a: usize, b: usize) -> Result<Tensor<T>> {
        let rank = self.rank();
        if a >= rank || b >= rank {
            return Err(Error::AxisOutOfRange {
                op: "transpose",
                axis: a.max(b),
                rank,
            });
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(a, b);
        self.permute_axes(&perm)
    }

    /// GELU, tanh approximation:
    /// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
    pub fn gelu(&self) -> Tensor<T> {
        let n = self.node();
        let c = T::from_f64(0.797_884_560_802_865_4);
        let k3 = T::from_f64(0.044_715);
        let half = T::from_f64(0.5);
        let len = n.data.len();
        let mut tanh_u = vec![T::ZERO; len];
        let mut data = vec![T::ZERO; len];
        for ((d, u), &x) in data.iter_mut().zip(tanh_u.iter_mut()).zip(n.data.iter()) {
            let t = (c * (x + k3 * x * x * x)).tanh();
            *u = t;
            *d = half * x * (T::ONE + t);
        }
        Tensor::from_node(n.shape.clone(), data, n.requires_grad, Op::Gelu(self.clone(), tanh_u))
    }

    /// Softmax along `axis`, max-subtracted for stability.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        let n = self.node();
        if axis >= n.shape.len() {
            return Err(Error::AxisOutOfRange {
                op: "softmax",
                axis,
                rank: n.shape.len(),
            });
        }
        let (outer, ax, inner) = axis_split(&n.shape, axis);
        let mut data = vec![T::ZERO; n.data.len()];
        if inner == 1 {
            // Last-axis rows are contiguous; separate passes keep the exp
            // loop free of reductions so it vectorizes.
            for o in 0..outer {
                let src = &n.data[o * ax..(o + 1) * ax];
                let row = &mut data[o * ax..(o + 1) * ax];
                let mut m = src[0];
                for &v in &src[1..] {
                    m = m.maxv(v);
                }
                for (d, &v) in row.iter_mut().zip(src) {
                    *d = (v - m).exp();
                }
                let mut sum = T::ZERO;
                for &e in row.iter() {
                    sum += e;
                }
                for d in row.iter_mut() {
                    *d /= sum;
                }
            }
        } else {
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * ax * inner + i;
                    let mut m = n.data[base];
                    for a in 1..ax {
                        m = m.maxv(n.data[base + a * inner]);
                    }
                    let mut sum = T::ZERO;
                    for a in 0..ax {
                        let e = (n.data[base + a * inner] - m).exp();
                        data[base + a * inner] = e;
                        sum += e;
                    }
                    for a in 0..ax {
                        data[base + a * inner] /= sum;
                    }
                }
            }
        }
        Ok(Tensor::from_node(
            n.shape.clone(),
            data,
            n.requires_grad,
            Op::Softmax(self.clone(), axis),
        ))
    }

    /// Layer normalization along `axis` with learned gain and bias (both of
    /// shape `[extent(axis)]`), epsilon 1e-5, biased variance.
    pub fn layer_norm(&self, gain: &Tensor<T>, bias: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
        let n = self.node();
        if axis >= n.shape.len() {
            return Err(Error::AxisOutOfRange {
                op: "layer_norm",
                axis,
                rank: n.shape.len(),
            });
        }
        let (outer, ax, inner) = axis_split(&n.shape, axis);
        let (gn, bn) = (gain.node(), bias.node());
        if gn.shape != [ax] || bn.shape != [ax] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                left: n.shape.clone(),
                right: gn.shape.clone(),
            });
        }
        let inv_n = T::from_f64(1.0 / ax as f64);
        let eps = T::from_f64(LN_EPS);
        let mut xhat = vec![T::ZERO; n.data.len()];
        let mut inv_std = vec![T::ZERO; outer * inner];
        let mut data = vec![T::ZERO; n.data.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * ax * inner + i;
                let mut mean = T::ZERO;
                for a in 0..ax {
                    mean += n.data[base + a * inner];
                }
                mean *= inv_n;
                let mut var = T::ZERO;
                for a in 0..ax {
                    let d = n.data[base + a * inner] - mean;
                    var += d * d;
                }
                var *= inv_n;
                let inv = T::ONE / (var + eps).sqrt();
                inv_std[o * inner + i] = inv;
                for a in 0..ax {
                    let xi = base + a * inner;
                    let xh = (n.data[xi] - mean) * inv;
                    xhat[xi] = xh;
                    data[xi] = xh * gn.data[a] + bn.data[a];
                }
            }
        }
        let rg = n.requires_grad || gn.requires_grad || bn.requires_grad;
        drop((gn, bn));
        Ok(Tensor::from_node(
            n.shape.clone(),
            data,
            rg,
            Op::LayerNorm {
                x: self.clone(),
                gain: gain.clone(),
                bias: bias.clone(),
                axis,
                xhat,
                inv_std,
            },
        ))
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum_all(&self) -> Tensor<T> {
        let n = self.node();
        let mut acc = T::ZERO;
        for &v in &n.data {
            acc += v;
        }
        Tensor::from_node(Vec::new(), vec![acc], n.requires_grad, Op::SumAll(self.clone()))
    }

    /// Mean along one axis; the axis is removed from the shape.
    pub fn mean_axis(&self, axis: usize) -> Result<Tensor<T>> {
        let n = self.node();
        if axis >= n.shape.len() {
            return Err(Error::AxisOutOfRange {
                op: "mean_axis",
                axis,
                rank: n.shape.len(),
            });
        }
        let (outer, ax, inner) = axis_split(&n.shape, axis);
        let inv = T::from_f64(1.0 / ax as f64);
        let mut data = vec![T::ZERO; outer * inner];
        for o in 0..outer {
            for a in 0..ax {
                let src = o * ax * inner + a * inner;
                let dst = o * inner;
                for i in 0..inner {
                    data[dst + i] += n.data[src + i];
                }
            }
        }
        for v in &mut data {
            *v *= inv;
        }
        let mut shape = n.shape.clone();
        shape.remove(axis);
        Ok(Tensor::from_node(shape, data, n.requires_grad, Op::MeanAxis(self.clone(), axis)))
    }

    /// Contiguous slice `start..start+len` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        let n = self.node();
        if axis >= n.shape.len() {
            return Err(Error::AxisOutOfRange {
                op: "narrow",
                axis,
                rank: n.shape.len(),
            });
        }
        let (outer, ax, inner) = axis_split(&n.shape, axis);
        if start + len > ax {
            return Err(Error::Range {
                op: "narrow",
                start,
                len,
                extent: ax,
            });
        }
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * ax + start) * inner;
            data.extend_from_slice(&n.data[base..base + len * inner]);
        }
        let mut shape = n.shape.clone();
        shape[axis] = len;
        Ok(Tensor::from_node(
            shape,
            data,
            n.requires_grad,
            Op::Narrow {
                x: self.clone(),
                axis,
                start,
                len,
            },
        ))
    }

    /// Concatenate along `axis`; all other extents must match.
    pub fn concat(parts: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let first = parts[0].shape();
        if axis >= first.len() {
            return Err(Error::AxisOutOfRange {
                op: "concat",
                axis,
                rank: first.len(),
            });
        }
        let mut total_ax = 0;
        for p in parts {
            let s = p.shape();
            let mut expect = first.clone();
            expect[axis] = s.get(axis).copied().unwrap_or(0);
            if s != expect {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: first,
                    right: s,
                });
            }
            total_ax += s[axis];
        }
        let (outer, _, inner) = axis_split(&first, axis);
        let mut shape = first.clone();
        shape[axis] = total_ax;
        let mut data = Vec::with_capacity(outer * total_ax * inner);
        for o in 0..outer {
            for p in parts {
                let pn = p.node();
                let ext = pn.shape[axis];
                let base = o * ext * inner;
                data.extend_from_slice(&pn.data[base..base + ext * inner]);
            }
        }
        let rg = parts.iter().any(|p| p.requires_grad());
        Ok(Tensor::from_node(shape, data, rg, Op::Concat(parts.to_vec(), axis)))
    }

    /// Mean softmax cross entropy of rank-2 logits `[batch, classes]`
    /// against integer labels. Returns a rank-0 loss.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Tensor<T>> {
        let n = self.node();
        if n.shape.len() != 2 || n.shape[0] != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                left: n.shape.clone(),
                right: vec![labels.len()],
            });
        }
        let (rows, cols) = (n.shape[0], n.shape[1]);
        let mut probs = vec![T::ZERO; rows * cols];
        let mut loss = T::ZERO;
        for (r, &y) in labels.iter().enumerate() {
            if y >= cols {
                return Err(Error::InvalidLabel {
                    index: r,
                    label: y,
                    classes: cols,
                });
            }
            let row = &n.data[r * cols..(r + 1) * cols];
            let mut m = row[0];
            for &v in &row[1..] {
                m = m.maxv(v);
            }
            let mut sum = T::ZERO;
            for (j, &v) in row.iter().enumerate() {
                let e = (v - m).exp();
                probs[r * cols + j] = e;
                sum += e;
            }
            let lse = m + sum.ln();
            for j in 0..cols {
                probs[r * cols + j] /= sum;
            }
            loss += lse - row[y];
        }
        loss *= T::from_f64(1.0 / rows as f64);
        Ok(Tensor::from_node(
            Vec::new(),
            vec![loss],
            n.requires_grad,
            Op::CrossEntropy {
                logits: self.clone(),
                labels: labels.to_vec(),
                probs,
            },
        ))
    }
}
