//! Dense tensors and a small tape-based reverse-mode differentiator.
//!
//! A [`Tensor`] is a flat row-major buffer plus its shape. Differentiable
//! computations are recorded on a [`Graph`], which owns every intermediate
//! value; [`Graph::backward`] then writes `∂loss/∂leaf` into the `grad` of each
//! leaf that was created with `requires_grad = true`, input images included.
//!
//! Everything is generic over [`Real`] so the same kernels run in `f32` for
//! training and attacks, and in `f64` for finite-difference gradient checks.

mod graph;
pub(crate) mod kernels;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

use crate::error::{Error, Result};

pub use graph::{softmax, Graph, NodeId};

/// Floating point element type usable in tensors.
pub trait Real: Float + Default + Debug + Display + Send + Sync + Sum + 'static {
    /// Converts an `f64` literal, rounding to the nearest representable value.
    fn lit(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn lit(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// N-dimensional dense array in row-major order.
///
/// `grad` is only ever populated by [`Graph::backward`] on leaves that
/// require gradients, and always has the same length as `data`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dimension {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![value; numel],
            requires_grad: false,
            grad: None,
        }
    }

    /// Single-element tensor of shape `[1]`.
    pub fn scalar(value: T) -> Self {
        Self::full([1], value)
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Self {
            shape,
            data: (0..numel).map(f).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn set_requires_grad(&mut self, requires_grad: bool) {
        self.requires_grad = requires_grad;
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn take_grad(&mut self) -> Option<Vec<T>> {
        self.grad.take()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub(crate) fn accumulate_grad(&mut self, contribution: &[T]) {
        debug_assert_eq!(contribution.len(), self.data.len());
        match &mut self.grad {
            Some(grad) => kernels::add_assign(grad, contribution),
            None => self.grad = Some(contribution.to_vec()),
        }
    }

    pub(crate) fn ensure_grad(&mut self) {
        if self.grad.is_none() {
            self.grad = Some(vec![T::zero(); self.data.len()]);
        }
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        match self.data.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::Usage(format!("item() on tensor of shape {:?}", self.shape))),
        }
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: self.shape,
                rhs: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_shape(other, op)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            requires_grad: false,
            grad: None,
        })
    }

    pub(crate) fn check_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|v| v * factor)
    }

    pub fn relu(&self) -> Self {
        self.map(|v| if v > T::zero() { v } else { T::zero() })
    }

    /// Elementwise sign with `sign(0) = 0`.
    pub fn sign(&self) -> Self {
        self.map(sign)
    }

    pub fn clamp(&self, lo: T, hi: T) -> Result<Self> {
        if lo > hi {
            return Err(Error::Argument(format!("clamp bounds inverted: {lo} > {hi}")));
        }
        Ok(self.map(|v| clamp(v, lo, hi)))
    }

    /// Clamps each element into `[lo[i], hi[i]]`.
    pub fn clamp_between(&self, lo: &Self, hi: &Self) -> Result<Self> {
        self.check_same_shape(lo, "clamp")?;
        self.check_same_shape(hi, "clamp")?;
        if let Some(i) = (0..lo.len()).find(|&i| lo.data[i] > hi.data[i]) {
            return Err(Error::Argument(format!(
                "clamp bounds inverted at {i}: {} > {}",
                lo.data[i], hi.data[i]
            )));
        }
        let data = self
            .data
            .iter()
            .zip(lo.data.iter().zip(&hi.data))
            .map(|(&v, (&l, &h))| clamp(v, l, h))
            .collect();
        Ok(Self {
            shape: self.shape.clone(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn l2_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn linf_distance(&self, other: &Self) -> Result<T> {
        self.check_same_shape(other, "linf_distance")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub fn l2_distance(&self, other: &Self) -> Result<T> {
        Ok(self.sub(other)?.l2_norm())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts element type, dropping any gradient.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }
}

#[inline]
pub(crate) fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

#[inline]
pub(crate) fn clamp<T: Real>(v: T, lo: T, hi: T) -> T {
    if v < lo {
        lo
    } else if v > hi {
        hi
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn new_rejects_mismatched_length() {
        assert!(matches!(
            Tensor::<f32>::new([2, 3], vec![0.0; 5]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn sign_of_zero_is_zero() {
        let t = Tensor::new([3], vec![-0.3f32, 0.0, 2.1]).unwrap();
        assert_eq!(t.sign().data(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn clamp_rejects_inverted_bounds() {
        let t = Tensor::new([1], vec![0.5f32]).unwrap();
        assert!(matches!(t.clamp(1.0, 0.0), Err(Error::Argument(_))));
        let lo = Tensor::new([1], vec![0.6f32]).unwrap();
        let hi = Tensor::new([1], vec![0.4f32]).unwrap();
        assert!(matches!(t.clamp_between(&lo, &hi), Err(Error::Argument(_))));
    }

    #[test]
    fn distances() {
        let a = Tensor::new([2], vec![0.0f64, 0.0]).unwrap();
        let b = Tensor::new([2], vec![3.0f64, -4.0]).unwrap();
        assert_eq!(a.linf_distance(&b).unwrap(), 4.0);
        assert_eq!(a.l2_distance(&b).unwrap(), 5.0);
    }

    proptest! {
        #[test]
        fn clamp_is_bounded_and_idempotent(
            v in prop::collection::vec(-5.0f32..5.0, 1..32),
            a in -2.0f32..2.0,
            width in 0.0f32..2.0,
        ) {
            let t = Tensor::new([v.len()], v).unwrap();
            let (lo, hi) = (a, a + width);
            let once = t.clamp(lo, hi).unwrap();
            prop_assert!(once.data().iter().all(|&x| lo <= x && x <= hi));
            prop_assert_eq!(once.clamp(lo, hi).unwrap(), once);
        }
    }
}
