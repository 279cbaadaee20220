//! Dense row-major tensors with reverse-mode gradients.
//!
//! A [`Tensor`] is a cheap handle (`Rc`) onto a node holding the value, an
//! optional gradient, and the op that produced it. Ops evaluate eagerly and
//! record their parents, so running a model forward builds the compute graph
//! as a side effect; [`Tensor::backward`] on a scalar loss then walks that
//! graph once in reverse topological order and accumulates `d loss / d leaf`
//! into every `requires_grad` leaf.
//!
//! Design choices worth knowing about:
//!
//! * transposes and axis permutations materialize a new buffer; there are no
//!   lazy stride views, which keeps every kernel a plain loop over contiguous
//!   data.
//! * the graph is single-threaded (`Rc`, not `Arc`); parallelism, if any,
//!   belongs inside individual kernels.
//! * `backward` may be called once per output node. Gradients of gradients
//!   are deliberately unsupported.

mod backward;
mod check;
mod ops;
pub(crate) mod shape;

pub use check::grad_check;

use crate::error::{Error, Result};
use crate::rng::DetRng;
use crate::scalar::Scalar;
use alloc::rc::Rc;
use alloc::vec::Vec;
use core::cell::{Ref, RefCell};

pub(crate) struct Node<T: Scalar> {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<T>,
    pub(crate) grad: Option<Vec<T>>,
    pub(crate) requires_grad: bool,
    pub(crate) back_done: bool,
    pub(crate) op: Op<T>,
}

/// How a node was produced, with whatever forward state its backward rule
/// needs (saved activations, the axis, label indices, ...).
pub(crate) enum Op<T: Scalar> {
    Leaf,
    Add(Tensor<T>, Tensor<T>),
    Sub(Tensor<T>, Tensor<T>),
    Mul(Tensor<T>, Tensor<T>),
    Neg(Tensor<T>),
    Scale(Tensor<T>, T),
    Matmul(Tensor<T>, Tensor<T>),
    BatchMatmul(Tensor<T>, Tensor<T>),
    Reshape(Tensor<T>),
    Permute(Tensor<T>, Vec<usize>),
    Gelu(Tensor<T>, Vec<T>),
    Softmax(Tensor<T>, usize),
    LayerNorm {
        x: Tensor<T>,
        gain: Tensor<T>,
        bias: Tensor<T>,
        axis: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    SumAll(Tensor<T>),
    MeanAxis(Tensor<T>, usize),
    Narrow {
        x: Tensor<T>,
        axis: usize,
        start: usize,
        len: usize,
    },
    Concat(Vec<Tensor<T>>, usize),
    CrossEntropy {
        logits: Tensor<T>,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

impl<T: Scalar> Op<T> {
    pub(crate) fn parents(&self) -> Vec<Tensor<T>> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Matmul(a, b) | Op::BatchMatmul(a, b) => {
                vec![a.clone(), b.clone()]
            }
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::Reshape(a)
            | Op::Permute(a, _)
            | Op::Gelu(a, _)
            | Op::Softmax(a, _)
            | Op::SumAll(a)
            | Op::MeanAxis(a, _)
            | Op::Narrow { x: a, .. } => vec![a.clone()],
            Op::LayerNorm { x, gain, bias, .. } => vec![x.clone(), gain.clone(), bias.clone()],
            Op::Concat(parts, _) => parts.clone(),
            Op::CrossEntropy { logits, .. } => vec![logits.clone()],
        }
    }
}

pub struct Tensor<T: Scalar = f32> {
    pub(crate) inner: Rc<RefCell<Node<T>>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> core::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        let n = self.inner.borrow();
        write!(f, "Tensor{:?}", n.shape)?;
        if n.data.len() <= 8 {
            write!(f, " {:?}", n.data)?;
        }
        Ok(())
    }
}

impl<T: Scalar> Tensor<T> {
    pub(crate) fn from_node(shape: Vec<usize>, data: Vec<T>, requires_grad: bool, op: Op<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Rc::new(RefCell::new(Node {
                shape,
                data,
                grad: None,
                requires_grad,
                back_done: false,
                op,
            })),
        }
    }

    /// New leaf from explicit contents. Fails if the data length does not
    /// match the shape.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::ElementCount {
                op: "from_vec",
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        Ok(Self::from_node(shape.to_vec(), data, false, Op::Leaf))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::from_node(shape.to_vec(), vec![T::ZERO; n], false, Op::Leaf)
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let n = shape.iter().product();
        Self::from_node(shape.to_vec(), vec![v; n], false, Op::Leaf)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::ONE)
    }

    /// Rank-0 tensor holding one value.
    pub fn scalar(v: T) -> Self {
        Self::from_node(Vec::new(), vec![v], false, Op::Leaf)
    }

    /// Leaf with entries drawn uniformly from `[lo, hi)`.
    pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut DetRng) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::from_f64(rng.uniform(lo, hi))).collect();
        Self::from_node(shape.to_vec(), data, false, Op::Leaf)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn rank(&self) -> usize {
        self.inner.borrow().shape.len()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copy of the value buffer, row-major.
    pub fn value(&self) -> Vec<T> {
        self.inner.borrow().data.clone()
    }

    /// Read access without copying.
    pub fn with_data<R>(&self, f: impl FnOnce(&[T]) -> R) -> R {
        f(&self.inner.borrow().data)
    }

    /// The single element of a rank-0 or one-element tensor.
    ///
    /// Panics when the tensor holds more than one value.
    pub fn item(&self) -> T {
        let n = self.inner.borrow();
        assert!(n.data.len() == 1, "item() on tensor of shape {:?}", n.shape);
        n.data[0]
    }

    /// Element at a full multi-index. Intended for tests; O(rank).
    pub fn get(&self, idx: &[usize]) -> T {
        let n = self.inner.borrow();
        assert_eq!(idx.len(), n.shape.len());
        let st = shape::strides(&n.shape);
        let off: usize = idx.iter().zip(&st).map(|(i, s)| i * s).sum();
        n.data[off]
    }

    /// Builder: mark this leaf as a trainable / differentiable input.
    pub fn with_grad(self) -> Self {
        self.inner.borrow_mut().requires_grad = true;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn set_requires_grad(&self, on: bool) {
        self.inner.borrow_mut().requires_grad = on;
    }

    /// Accumulated gradient, if `backward` has reached this leaf.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Overwrite the value buffer in place (same length required).
    pub fn set_data(&self, data: &[T]) -> Result<()> {
        let mut n = self.inner.borrow_mut();
        if data.len() != n.data.len() {
            return Err(Error::ElementCount {
                op: "set_data",
                shape: n.shape.clone(),
                len: data.len(),
            });
        }
        n.data.copy_from_slice(data);
        Ok(())
    }

    /// Optimizer hook: mutate the value given the current gradient.
    /// Fails if no gradient has been accumulated.
    pub fn apply_step(&self, f: impl FnOnce(&mut [T], &[T])) -> Result<()> {
        let mut n = self.inner.borrow_mut();
        let Node { data, grad, .. } = &mut *n;
        match grad.as_ref() {
            Some(g) => {
                f(data, g);
                Ok(())
            }
            None => Err(Error::NoGrad("parameter update")),
        }
    }

    /// Leaf copy of the current value, cut off from the graph.
    pub fn detach(&self) -> Self {
        let n = self.inner.borrow();
        Self::from_node(n.shape.clone(), n.data.clone(), false, Op::Leaf)
    }

    /// Row-wise argmax of a rank-2 tensor (no graph participation).
    pub fn argmax_rows(&self) -> Vec<usize> {
        let n = self.inner.borrow();
        assert_eq!(n.shape.len(), 2, "argmax_rows wants rank 2");
        let (rows, cols) = (n.shape[0], n.shape[1]);
        (0..rows)
            .map(|r| {
                let row = &n.data[r * cols..(r + 1) * cols];
                let mut best = 0;
                for j in 1..cols {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    pub(crate) fn ptr_id(&self) -> usize {
        Rc::as_ptr(&self.inner) as usize
    }

    pub(crate) fn node(&self) -> Ref<'_, Node<T>> {
        self.inner.borrow()
    }
}
