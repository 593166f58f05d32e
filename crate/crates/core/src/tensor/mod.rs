//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Tensors are immutable, reference-counted buffers in row-major order.
//! Applying a primitive to an input that participates in gradient tracking
//! attaches the output to a graph node holding the backward rule; calling
//! [`backward`] on a scalar walks that graph once in reverse topological
//! order and returns a gradient map for every tracked leaf. Each forward
//! pass builds a fresh graph; nothing is retained across calls.
//!
//! Training and visualization run in `f32`; the finite-difference checks in
//! the test suites instantiate the same ops at `f64`.

use std::fmt;
use std::iter::Sum;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use thiserror::Error;

pub mod gradcheck;
pub(crate) mod graph;
pub(crate) mod kernels;
mod ops;
mod optim;

pub use graph::{backward, Gradients};
pub use ops::softmax_cross_entropy;
pub use optim::{OptimKind, Optimizer};

/// 2x3 affine map from output pixel coordinates to source coordinates:
/// `sx = m[0]*ox + m[1]*oy + m[2]`, `sy = m[3]*ox + m[4]*oy + m[5]`.
pub type AffineMatrix = [f64; 6];

/// Scalar element type of a tensor. Implemented for `f32` and `f64`.
pub trait Element:
    num_traits::Float + num_traits::NumAssign + Sum<Self> + Send + Sync + fmt::Debug + fmt::Display + 'static
{
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    /// `C <- alpha * A * B + beta * C` over strided row-major views.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Element for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Element for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Errors raised by tensor primitives and the optimizer.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: dimension error: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("{op}: non-finite value in output")]
    NonFinite { op: &'static str },

    #[error("contract error: {0}")]
    Contract(String),
}

impl TensorError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// An n-dimensional array in row-major order, optionally attached to an
/// autodiff graph.
///
/// Cloning is cheap (the buffer is shared) and clones refer to the same
/// logical tensor: gradients are keyed by tensor identity, not by value.
pub struct Tensor<T: Element> {
    id: u64,
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    requires_grad: bool,
    node: Option<Arc<graph::Node<T>>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            id: self.id,
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            requires_grad: self.requires_grad,
            node: self.node.clone(),
        }
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &self.shape)
            .field("requires_grad", &self.requires_grad)
            .field("tracked", &self.node.is_some())
            .finish()
    }
}

impl<T: Element> Tensor<T> {
    /// Build a tensor from a flat row-major buffer.
    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() || shape.iter().any(|&d| d == 0) {
            return Err(TensorError::shape(
                "from_vec",
                format!("shape {:?} does not describe a buffer of {} elements", shape, data.len()),
            ));
        }
        Ok(Tensor {
            id: fresh_id(),
            shape: shape.to_vec(),
            data: Arc::new(data),
            requires_grad: false,
            node: None,
        })
    }

    /// Leaf tensor that participates in gradient computation.
    pub fn param(data: Vec<T>, shape: &[usize]) -> Result<Self, TensorError> {
        let mut t = Self::from_vec(data, shape)?;
        t.requires_grad = true;
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor::from_vec(vec![T::zero(); numel], shape).expect("zeros: valid shape")
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Tensor::from_vec(vec![value; numel], shape).expect("full: valid shape")
    }

    /// Rank-1 single-element tensor, broadcastable against anything.
    pub fn scalar(value: T) -> Self {
        Tensor::from_vec(vec![value], &[1]).unwrap()
    }

    pub(crate) fn from_parts(
        data: Vec<T>,
        shape: Vec<usize>,
        node: Option<graph::Node<T>>,
    ) -> Self {
        Tensor {
            id: fresh_id(),
            shape,
            data: Arc::new(data),
            requires_grad: false,
            node: node.map(Arc::new),
        }
    }

    /// Same data, detached from the graph and from gradient tracking.
    pub fn detach(&self) -> Self {
        Tensor {
            id: fresh_id(),
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            requires_grad: false,
            node: None,
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// True when this tensor is part of a gradient computation, either as a
    /// tracked leaf or as the output of a primitive applied to one.
    pub fn tracks_grad(&self) -> bool {
        self.requires_grad || self.node.is_some()
    }

    pub(crate) fn node(&self) -> Option<&Arc<graph::Node<T>>> {
        self.node.as_ref()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T, TensorError> {
        if self.len() != 1 {
            return Err(TensorError::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Convert elements to `f64` (used by tests and the whitening path).
    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|&v| Element::to_f64(v)).collect()
    }

    /// Row-major index of the maximum element (first on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.data.iter().enumerate() {
            if *v > self.data[best] {
                best = i;
            }
        }
        best
    }
}

pub(crate) fn ensure_finite<T: Element>(op: &'static str, data: &[T]) -> Result<(), TensorError> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_mismatched_shape() {
        let err = Tensor::from_vec(vec![1.0f32, 2.0], &[3]).unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch { .. }));
    }

    #[test]
    fn clones_share_identity_and_data() {
        let t = Tensor::from_vec(vec![1.0f32, 2.0], &[2]).unwrap();
        let u = t.clone();
        assert_eq!(t.id(), u.id());
        assert_eq!(t.data(), u.data());
    }

    #[test]
    fn detach_drops_tracking_but_keeps_data() {
        let t = Tensor::param(vec![1.0f64, 2.0], &[2]).unwrap();
        let d = t.detach();
        assert!(!d.tracks_grad());
        assert_ne!(d.id(), t.id());
        assert_eq!(d.data(), t.data());
    }
}
