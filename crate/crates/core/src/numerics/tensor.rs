use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

use crate::error::{Error, Result};

/// Scalar type a [`Tensor`] can hold. Training uses `f32`, gradient checks `f64`.
pub trait Real: Float + Debug + Display + Default + Sum + Send + Sync + 'static {
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense row-major array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::contract("tensor", format!("zero extent in shape {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::contract(
                "tensor",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<T>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
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

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::contract(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    /// Row `i` of a tensor viewed as `[shape[0], rest]`.
    pub fn row(&self, i: usize) -> &[T] {
        let width = self.data.len() / self.shape[0];
        &self.data[i * width..(i + 1) * width]
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (a, b)| acc.max((*a - *b).abs()))
    }
}

/// Numerically stable softmax of one row.
pub fn softmax_slice<T: Real>(logits: &[T], out: &mut [T]) {
    let max = logits.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut total = T::zero();
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        total = total + *o;
    }
    for o in out.iter_mut() {
        *o = *o / total;
    }
}

pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); logits.len()];
    softmax_slice(logits, &mut out);
    out
}

/// `log(sum(exp(row)))`, stabilized.
pub fn log_sum_exp<T: Real>(row: &[T]) -> T {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let total: T = row.iter().map(|&v| (v - max).exp()).sum();
    max + total.ln()
}

/// `(max, tail)` with `log_sum_exp(row) = max + tail`. The tail is computed
/// with `ln_1p` so `lse - row[m]` stays accurate when one logit dominates.
pub fn log_sum_exp_split<T: Real>(row: &[T]) -> (T, T) {
    let top = argmax(row);
    let max = row[top];
    let rest: T = row
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != top)
        .map(|(_, &v)| (v - max).exp())
        .sum();
    (max, rest.ln_1p())
}

pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_data() {
        assert!(Tensor::<f64>::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(&[0, 3], vec![]).is_err());
        assert!(Tensor::<f64>::new(&[2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let p = softmax(&[1000.0f64, 1000.0]);
        assert_eq!(p, vec![0.5, 0.5]);
        let p = softmax(&[-1e4f64, 0.0]);
        assert_eq!(p[1], 1.0);
    }

    #[test]
    fn log_sum_exp_matches_naive() {
        let row = [0.3f64, -1.2, 2.5];
        let naive = row.iter().map(|v| v.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&row) - naive).abs() < 1e-14);
    }
}
