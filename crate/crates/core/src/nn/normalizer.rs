use super::matrix::Matrix;
use crate::error::{Error, Result};
use crate::real::Real;

pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Per-column z-scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer<T> {
    mean: Vec<T>,
    std: Vec<T>,
    epsilon: T,
}

impl<T: Real> Normalizer<T> {
    /// Identity normalizer of the given width.
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![T::zero(); dim],
            std: vec![T::one(); dim],
            epsilon: T::lit(DEFAULT_EPSILON),
        }
    }

    pub fn from_parts(mean: Vec<T>, std: Vec<T>, epsilon: T) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::shape("Normalizer", mean.len(), std.len()));
        }
        if std.iter().any(|&s| !(s >= epsilon)) {
            return Err(Error::Input("normalizer std below epsilon".into()));
        }
        Ok(Self { mean, std, epsilon })
    }

    /// Column means and standard deviations (population), with `epsilon`
    /// added to each std.
    pub fn fit(data: &Matrix<T>, epsilon: T) -> Result<Self> {
        let n = data.rows();
        if n == 0 {
            return Err(Error::Input("cannot fit a normalizer on zero rows".into()));
        }
        let d = data.cols();
        let nf = T::from_usize(n).unwrap();
        let mut mean = vec![T::zero(); d];
        for i in 0..n {
            for (m, &v) in mean.iter_mut().zip(data.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nf);
        let mut var = vec![T::zero(); d];
        for i in 0..n {
            for ((s, &v), &m) in var.iter_mut().zip(data.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / nf).sqrt() + epsilon).collect();
        Ok(Self { mean, std, epsilon })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    pub fn std(&self) -> &[T] {
        &self.std
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn transform_row(&self, row: &mut [T]) {
        for ((v, &m), &s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }

    pub fn inverse_row(&self, row: &mut [T]) {
        for ((v, &m), &s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = *v * s + m;
        }
    }

    pub fn transform(&self, data: &Matrix<T>) -> Result<Matrix<T>> {
        if data.cols() != self.dim() {
            return Err(Error::shape("Normalizer::transform", self.dim(), data.cols()));
        }
        let mut out = data.clone();
        for i in 0..out.rows() {
            self.transform_row(out.row_mut(i));
        }
        Ok(out)
    }

    pub fn inverse(&self, data: &Matrix<T>) -> Result<Matrix<T>> {
        if data.cols() != self.dim() {
            return Err(Error::shape("Normalizer::inverse", self.dim(), data.cols()));
        }
        let mut out = data.clone();
        for i in 0..out.rows() {
            self.inverse_row(out.row_mut(i));
        }
        Ok(out)
    }

    /// `log |det ∂transform/∂x|` of the affine map, i.e. `−Σ log std`.
    pub fn log_abs_det(&self) -> T {
        -self.std.iter().map(|s| s.ln()).sum::<T>()
    }
}
