//! Dense row-major tensor with copy-on-write storage.
//!
//! Clones are O(1) (shared `Arc`), which keeps graph construction cheap when
//! the same parameter array appears in many nodes. Mutation goes through
//! [`Tensor::data_mut`], which unshares on demand.

use std::sync::Arc;

use crate::real::Real;

#[derive(Clone, Debug)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: Arc::new(vec![T::zero(); shape.iter().product()]) }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(data.len(), shape.iter().product::<usize>(), "shape/data size mismatch");
        Tensor { shape: shape.to_vec(), data: Arc::new(data) }
    }

    pub fn scalar(v: T) -> Self {
        Tensor::from_vec(&[1], vec![v])
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Tensor { shape: shape.to_vec(), data: Arc::new(vec![v; shape.iter().product()]) }
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

    pub fn data_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    /// Reinterpret the buffer with a new shape of identical element count.
    pub fn reshaped(&self, shape: &[usize]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.len(), "reshape size mismatch");
        Tensor { shape: shape.to_vec(), data: Arc::clone(&self.data) }
    }

    pub fn item(&self) -> T {
        assert_eq!(self.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor::from_vec(&self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Squared Euclidean norm of the buffer.
    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| { let x = v.to_f64_lossy(); x * x }).sum()
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        Tensor::from_vec(&self.shape, self.data.iter().map(|v| v.to_f64_lossy()).collect())
    }

    pub fn to_f32_vec(&self) -> Vec<f32> {
        self.data.iter().map(|v| v.to_f64_lossy() as f32).collect()
    }
}

impl<T: PartialEq> PartialEq for Tensor<T> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && *self.data == *other.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cow_semantics() {
        let a: Tensor<f64> = Tensor::zeros(&[2, 3]);
        let mut b = a.clone();
        b.data_mut()[0] = 7.0;
        assert_eq!(a.data()[0], 0.0);
        assert_eq!(b.data()[0], 7.0);
    }

    #[test]
    fn reshape_shares_storage() {
        let a: Tensor<f32> = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = a.reshaped(&[4]);
        assert_eq!(b.shape(), &[4]);
        assert_eq!(b.data(), a.data());
    }
}
