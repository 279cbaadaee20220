//! Error type shared by every module in the crate.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Two operands whose shapes cannot be combined by the named op.
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// Data length does not match the product of the extents.
    ElementCount {
        op: &'static str,
        shape: Vec<usize>,
        len: usize,
    },
    /// Axis index past the rank of the tensor.
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    /// Reshape between shapes of different element counts.
    InvalidReshape { from: Vec<usize>, to: Vec<usize> },
    /// `backward` called on a tensor that is not a scalar.
    NotScalarLoss { shape: Vec<usize> },
    /// `backward` called twice through the same output node. Gradients of
    /// gradients are not supported; build a fresh graph instead.
    GraphReuse,
    /// Gradient requested from a tensor that does not track one.
    NoGrad(&'static str),
    /// Class label outside `0..classes`.
    InvalidLabel {
        index: usize,
        label: usize,
        classes: usize,
    },
    /// Slice range past the end of an axis.
    Range {
        op: &'static str,
        start: usize,
        len: usize,
        extent: usize,
    },
    /// Invalid mixing schedule (radix does not divide the width, a stage
    /// would need a fractional block count, and so on).
    Schedule(String),
    /// Two structured factors whose product is not defined.
    Incomposable(String),
    /// A computation produced NaN or infinity where a finite value is
    /// required.
    NonFinite(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: incompatible shapes {left:?} and {right:?}")
            }
            Error::ElementCount { op, shape, len } => {
                write!(f, "{op}: shape {shape:?} needs {} elements, got {len}", shape.iter().product::<usize>())
            }
            Error::AxisOutOfRange { op, axis, rank } => {
                write!(f, "{op}: axis {axis} out of range for rank {rank}")
            }
            Error::InvalidReshape { from, to } => {
                write!(f, "reshape: cannot view {from:?} as {to:?} (element counts differ)")
            }
            Error::NotScalarLoss { shape } => {
                write!(f, "backward: loss must be a scalar, got shape {shape:?}")
            }
            Error::GraphReuse => {
                write!(f, "backward: this output was already back-propagated; double backward is unsupported")
            }
            Error::NoGrad(what) => write!(f, "no gradient recorded for {what}"),
            Error::InvalidLabel { index, label, classes } => {
                write!(f, "label {label} at row {index} out of range for {classes} classes")
            }
            Error::Range { op, start, len, extent } => {
                write!(f, "{op}: range {start}..{} exceeds axis extent {extent}", start + len)
            }
            Error::Schedule(msg) => write!(f, "schedule: {msg}"),
            Error::Incomposable(msg) => write!(f, "incomposable factors: {msg}"),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
