//! Dense row-major tensor storage, generic over the element type.
//!
//! Training runs in `f32`; `f64` is compiled in so kernels and gradients can
//! be checked against high-precision oracles. Everything is CPU-side,
//! contiguous, last axis fastest.

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Element dtype tag, used by file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    /// On-disk code used by the clip-tensor format (0 = f32).
    pub fn code(self) -> u32 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }
}

/// Closed set of element types the kernels support.
pub trait Scalar:
    Float + NumAssign + FromPrimitive + ToPrimitive + Sum + Send + Sync + fmt::Debug + fmt::Display + 'static
{
    const DTYPE: Dtype;

    fn of_f64(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite f64 converts to any Scalar")
    }

    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {
    const DTYPE: Dtype = Dtype::F32;
}

impl Scalar for f64 {
    const DTYPE: Dtype = Dtype::F64;
}

/// Dense N-dimensional array (rank 1..=5), row-major, last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    /// Build from shape and flat data. Panics on a shape/data mismatch —
    /// callers validating untrusted input must check extents first.
    pub fn new(shape: &[usize], data: Vec<T>) -> Self {
        assert!(
            !shape.is_empty() && shape.len() <= 5,
            "tensor rank must be 1..=5, got {}",
            shape.len()
        );
        let numel: usize = shape.iter().product();
        assert_eq!(numel, data.len(), "shape {:?} wants {} elements, got {}", shape, numel, data.len());
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor::new(shape, vec![T::zero(); numel])
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Tensor::new(shape, vec![value; numel])
    }

    pub fn scalar(value: T) -> Self {
        Tensor::new(&[1], vec![value])
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let numel: usize = shape.iter().product();
        Tensor::new(shape, (0..numel).map(|i| f(i)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    /// Row-major strides (in elements).
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.shape[i + 1];
        }
        s
    }

    /// Element access by multi-index. Test/diagnostic convenience, not a hot path.
    pub fn at(&self, idx: &[usize]) -> T {
        debug_assert_eq!(idx.len(), self.shape.len());
        let strides = self.strides();
        let lin: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        self.data[lin]
    }

    /// Same data, new shape (must preserve numel).
    pub fn reshaped(&self, shape: &[usize]) -> Tensor<T> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(T) -> T + Sync) -> Tensor<T> {
        Tensor::new(&self.shape, self.data.iter().map(|&x| f(x)).collect())
    }

    /// Element-wise cast to another scalar type (f32 <-> f64).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor::new(&self.shape, self.data.iter().map(|x| U::of_f64(x.as_f64())).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Forward ops promise finite outputs for finite inputs; enforced in
/// debug/test builds only.
#[inline]
pub fn debug_assert_finite<T: Scalar>(t: &Tensor<T>, op: &str) {
    debug_assert!(t.is_finite(), "{op} produced a non-finite value");
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strides_row_major() {
        let t = Tensor::<f32>::zeros(&[2, 3, 4]);
        assert_eq!(t.strides(), vec![12, 4, 1]);
    }

    #[test]
    fn at_indexes_last_axis_fastest() {
        let t = Tensor::new(&[2, 3], (0..6).map(|i| i as f64).collect());
        assert_eq!(t.at(&[0, 2]), 2.0);
        assert_eq!(t.at(&[1, 0]), 3.0);
    }

    #[test]
    #[should_panic]
    fn shape_data_mismatch_panics() {
        let _ = Tensor::new(&[2, 2], vec![1.0f32; 3]);
    }

    #[test]
    fn cast_round_trips_f32() {
        let t = Tensor::new(&[3], vec![0.5f32, -1.25, 3.0]);
        let back: Tensor<f32> = t.cast::<f64>().cast();
        assert_eq!(t, back);
    }
}
