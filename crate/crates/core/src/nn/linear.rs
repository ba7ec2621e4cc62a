use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::matrix::Matrix;
use crate::error::{Error, Result};
use crate::real::Real;

/// Affine layer `y = x·Wᵀ + b`, optionally with a fixed binary mask on `W`.
///
/// Weights are stored `out × in`, row-major. With a mask the layer behaves
/// as if `W ∘ M` were the weight matrix, and masked entries receive exactly
/// zero gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    in_dim: usize,
    out_dim: usize,
    pub(crate) weight: Vec<T>,
    pub(crate) bias: Vec<T>,
    mask: Option<Vec<bool>>,
}

#[derive(Debug, Clone)]
pub struct LinearGrad<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Linear<T> {
    /// Glorot-uniform weights, zero bias.
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim).max(1) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("valid bounds");
        let weight = (0..in_dim * out_dim)
            .map(|_| T::lit(dist.sample(rng)))
            .collect();
        Self {
            in_dim,
            out_dim,
            weight,
            bias: vec![T::zero(); out_dim],
            mask: None,
        }
    }

    pub fn from_parts(in_dim: usize, out_dim: usize, weight: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if weight.len() != in_dim * out_dim {
            return Err(Error::shape("Linear weight", in_dim * out_dim, weight.len()));
        }
        if bias.len() != out_dim {
            return Err(Error::shape("Linear bias", out_dim, bias.len()));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weight,
            bias,
            mask: None,
        })
    }

    /// Attach a mask (`out × in`, row-major). Masked weights are zeroed so the
    /// stored parameters agree with the effective ones.
    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.weight.len() {
            return Err(Error::shape("Linear mask", self.weight.len(), mask.len()));
        }
        for (w, &m) in self.weight.iter_mut().zip(&mask) {
            if !m {
                *w = T::zero();
            }
        }
        self.mask = Some(mask);
        Ok(self)
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn weight(&self) -> &[T] {
        &self.weight
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn weight_mut(&mut self) -> &mut [T] {
        &mut self.weight
    }

    pub fn bias_mut(&mut self) -> &mut [T] {
        &mut self.bias
    }

    fn effective_weight(&self) -> std::borrow::Cow<'_, [T]> {
        match &self.mask {
            None => std::borrow::Cow::Borrowed(&self.weight),
            Some(mask) => std::borrow::Cow::Owned(
                self.weight
                    .iter()
                    .zip(mask)
                    .map(|(&w, &m)| if m { w } else { T::zero() })
                    .collect(),
            ),
        }
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        if x.cols() != self.in_dim {
            return Err(Error::shape("Linear::forward", self.in_dim, x.cols()));
        }
        let b = x.rows();
        let mut y = Matrix::zeros(b, self.out_dim);
        for i in 0..b {
            y.row_mut(i).copy_from_slice(&self.bias);
        }
        let w = self.effective_weight();
        T::gemm(
            b,
            self.in_dim,
            self.out_dim,
            T::one(),
            x.as_slice(),
            self.in_dim as isize,
            1,
            &w,
            1,
            self.in_dim as isize,
            T::one(),
            y.as_mut_slice(),
            self.out_dim as isize,
            1,
        );
        Ok(y)
    }

    /// Given the layer input `x` and `dy = ∂L/∂y`, return `∂L/∂x` and the
    /// parameter gradients.
    pub fn backward(&self, x: &Matrix<T>, dy: &Matrix<T>) -> (Matrix<T>, LinearGrad<T>) {
        let b = x.rows();
        debug_assert_eq!(dy.rows(), b);
        debug_assert_eq!(dy.cols(), self.out_dim);
        let mut gw = vec![T::zero(); self.weight.len()];
        // dW = dyᵀ · x
        T::gemm(
            self.out_dim,
            b,
            self.in_dim,
            T::one(),
            dy.as_slice(),
            1,
            self.out_dim as isize,
            x.as_slice(),
            self.in_dim as isize,
            1,
            T::zero(),
            &mut gw,
            self.in_dim as isize,
            1,
        );
        if let Some(mask) = &self.mask {
            for (g, &m) in gw.iter_mut().zip(mask) {
                if !m {
                    *g = T::zero();
                }
            }
        }
        let mut gb = vec![T::zero(); self.out_dim];
        for i in 0..b {
            for (g, &d) in gb.iter_mut().zip(dy.row(i)) {
                *g += d;
            }
        }
        let w = self.effective_weight();
        let mut dx = Matrix::zeros(b, self.in_dim);
        T::gemm(
            b,
            self.out_dim,
            self.in_dim,
            T::one(),
            dy.as_slice(),
            self.out_dim as isize,
            1,
            &w,
            self.in_dim as isize,
            1,
            T::zero(),
            dx.as_mut_slice(),
            self.in_dim as isize,
            1,
        );
        (dx, LinearGrad { weight: gw, bias: gb })
    }
}
