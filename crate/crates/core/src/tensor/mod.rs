//! Dense rank-3 tensors and the reverse-mode tape that differentiates them.
//!
//! Every tensor is laid out as `(batch, channels, time)` in row-major order.
//! Parameters reuse the same layout: a convolution weight is
//! `(out_channels, in_channels / groups, kernel)` and per-channel vectors
//! such as biases are `(1, channels, 1)`.

mod element;
pub mod gradcheck;
mod ops;
mod tape;

pub use element::Element;
pub use gradcheck::{grad_check, grad_check_at, grad_check_with, GradCheckError, GradCheckReport};
pub use ops::BinaryKind;
pub use tape::{Backward, Gradients, NodeId, Tape};

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Shape-level failures shared by every differentiable operation.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("value count {got} does not match shape {shape} ({expected} elements)")]
    Length {
        shape: Shape,
        expected: usize,
        got: usize,
    },
    #[error("backward root must be a scalar (1, 1, 1) tensor, got {0}")]
    NonScalarRoot(Shape),
    #[error("batch statistics need at least 2 values per channel, got {count}")]
    DegenerateBatch { count: usize },
    #[error("backward root is not recorded on this tape")]
    Detached,
}

impl TensorError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::Shape {
            op,
            detail: detail.into(),
        }
    }
}

/// `(batch, channels, time)` extents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub batch: usize,
    pub channels: usize,
    pub len: usize,
}

impl Shape {
    pub const SCALAR: Shape = Shape::new(1, 1, 1);

    pub const fn new(batch: usize, channels: usize, len: usize) -> Self {
        Shape {
            batch,
            channels,
            len,
        }
    }

    pub const fn numel(&self) -> usize {
        self.batch * self.channels * self.len
    }
}

impl From<(usize, usize, usize)> for Shape {
    fn from((b, c, l): (usize, usize, usize)) -> Self {
        Shape::new(b, c, l)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.batch, self.channels, self.len)
    }
}

/// Initial contents for [`Tensor::new`].
#[derive(Clone, Debug)]
pub enum Fill<T> {
    Zeros,
    Ones,
    /// Uniform draws in `[lo, hi)` from a ChaCha8 stream seeded with `seed`.
    Uniform { lo: f64, hi: f64, seed: u64 },
    Explicit(Vec<T>),
}

/// An immutable rank-3 array, optionally tracked by a [`Tape`].
///
/// Cloning is cheap: the buffer is shared. [`Tensor::data_mut`] copies on
/// write, so a tensor handed to a tape never changes underneath it.
#[derive(Clone)]
pub struct Tensor<T> {
    shape: Shape,
    data: Arc<Vec<T>>,
    node: Option<NodeId>,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: impl Into<Shape>, fill: Fill<T>) -> Result<Self, TensorError> {
        let shape = shape.into();
        let n = shape.numel();
        let data = match fill {
            Fill::Zeros => vec![T::zero(); n],
            Fill::Ones => vec![T::one(); n],
            Fill::Uniform { lo, hi, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                uniform_values(&mut rng, n, lo, hi)
            }
            Fill::Explicit(values) => {
                if values.len() != n {
                    return Err(TensorError::Length {
                        shape,
                        expected: n,
                        got: values.len(),
                    });
                }
                values
            }
        };
        Ok(Tensor::from_parts(shape, data))
    }

    pub fn zeros(shape: impl Into<Shape>) -> Self {
        let shape = shape.into();
        Tensor::from_parts(shape, vec![T::zero(); shape.numel()])
    }

    pub fn ones(shape: impl Into<Shape>) -> Self {
        let shape = shape.into();
        Tensor::from_parts(shape, vec![T::one(); shape.numel()])
    }

    pub fn full(shape: impl Into<Shape>, value: T) -> Self {
        let shape = shape.into();
        Tensor::from_parts(shape, vec![value; shape.numel()])
    }

    pub fn uniform(shape: impl Into<Shape>, lo: f64, hi: f64, seed: u64) -> Self {
        let shape = shape.into();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_parts(shape, uniform_values(&mut rng, shape.numel(), lo, hi))
    }

    pub fn from_vec(shape: impl Into<Shape>, values: Vec<T>) -> Result<Self, TensorError> {
        Tensor::new(shape, Fill::Explicit(values))
    }

    /// A `(1, 1, 1)` tensor.
    pub fn scalar(value: T) -> Self {
        Tensor::from_parts(Shape::SCALAR, vec![value])
    }

    /// Panics if `data.len() != shape.numel()`; callers inside the crate
    /// construct buffers of the right size.
    pub(crate) fn from_parts(shape: Shape, data: Vec<T>) -> Self {
        assert_eq!(data.len(), shape.numel(), "buffer does not match {shape}");
        Tensor {
            shape,
            data: Arc::new(data),
            node: None,
        }
    }

    pub(crate) fn with_node(mut self, node: NodeId) -> Self {
        self.node = Some(node);
        self
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable access to the buffer; detaches from any tape.
    pub fn data_mut(&mut self) -> &mut [T] {
        self.node = None;
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<T> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    /// Same values, no tape handle.
    pub fn detach(&self) -> Self {
        Tensor {
            shape: self.shape,
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    pub fn at(&self, b: usize, c: usize, t: usize) -> T {
        let s = self.shape;
        debug_assert!(b < s.batch && c < s.channels && t < s.len);
        self.data[(b * s.channels + c) * s.len + t]
    }

    /// The `(b, c, ..)` row.
    pub fn row(&self, b: usize, c: usize) -> &[T] {
        let s = self.shape;
        let start = (b * s.channels + c) * s.len;
        &self.data[start..start + s.len]
    }

    /// Value of a `(1, 1, 1)` tensor.
    pub fn item(&self) -> Option<T> {
        (self.shape == Shape::SCALAR).then(|| self.data[0])
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Element-type conversion (through `f64`).
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor::from_parts(
            self.shape,
            self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        )
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}

fn uniform_values<T: Element>(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<T> {
    (0..n)
        .map(|_| T::lit(lo + (hi - lo) * rng.gen::<f64>()))
        .collect()
}

impl<T: Element> PartialEq for Tensor<T> {
    /// Value equality; tape handles are ignored.
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.shape);
        if self.numel() <= SHOWN {
            s.field("data", &self.data.as_slice());
        } else {
            s.field("head", &&self.data[..SHOWN]);
        }
        if let Some(node) = self.node {
            s.field("node", &node);
        }
        s.finish()
    }
}
