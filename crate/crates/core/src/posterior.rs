//! Mixed samples and the interface shared by every posterior (learned,
//! analytic, or deliberately miscalibrated).

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::made::DiscreteSchema;
use crate::nn::Matrix;

/// One parameter vector `θ = (θ_d, θ_c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedSample {
    pub theta_d: Vec<usize>,
    pub theta_c: Vec<f64>,
}

/// A batch of parameter vectors, row-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedSamples {
    pub theta_d: Vec<Vec<usize>>,
    pub theta_c: Matrix<f64>,
}

impl MixedSamples {
    pub fn new(theta_d: Vec<Vec<usize>>, theta_c: Matrix<f64>) -> Result<Self> {
        if theta_d.len() != theta_c.rows() {
            return Err(Error::shape("mixed samples", theta_d.len(), theta_c.rows()));
        }
        Ok(Self { theta_d, theta_c })
    }

    pub fn from_samples(samples: &[MixedSample], k: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(samples.len() * k);
        for s in samples {
            if s.theta_c.len() != k {
                return Err(Error::shape("continuous parameter", k, s.theta_c.len()));
            }
            data.extend_from_slice(&s.theta_c);
        }
        Self::new(
            samples.iter().map(|s| s.theta_d.clone()).collect(),
            Matrix::from_vec(samples.len(), k, data)?,
        )
    }

    pub fn len(&self) -> usize {
        self.theta_d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta_d.is_empty()
    }

    pub fn get(&self, i: usize) -> MixedSample {
        MixedSample {
            theta_d: self.theta_d[i].clone(),
            theta_c: self.theta_c.row(i).to_vec(),
        }
    }

    /// `[one-hot(θ_d) ∥ θ_c]` feature rows.
    pub fn encode(&self, schema: &DiscreteSchema) -> Result<Matrix<f64>> {
        let w = schema.one_hot_width();
        let k = self.theta_c.cols();
        let mut out = Matrix::zeros(self.len(), w + k);
        for i in 0..self.len() {
            let row = out.row_mut(i);
            schema.encode(&self.theta_d[i], &mut row[..w])?;
            row[w..].copy_from_slice(self.theta_c.row(i));
        }
        Ok(out)
    }

    /// Empirical per-dimension class frequencies.
    pub fn discrete_frequencies(&self, schema: &DiscreteSchema) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = schema.dims().iter().map(|d| vec![0.0; d.classes]).collect();
        let n = self.len().max(1) as f64;
        for t in &self.theta_d {
            for (i, &v) in t.iter().enumerate() {
                out[i][v] += 1.0 / n;
            }
        }
        out
    }
}

/// Anything that returns posterior draws and discrete marginals for an
/// observation in raw simulator units.
pub trait PosteriorEstimator: Sync {
    fn sample(&self, x: &[f64], n: usize, rng: &mut dyn RngCore) -> Result<MixedSamples>;

    /// `q(θ_{d_i} = j | x)` for every dimension `i` and class `j`.
    fn discrete_marginals(&self, x: &[f64], rng: &mut dyn RngCore) -> Result<Vec<Vec<f64>>>;
}

impl<P: PosteriorEstimator + ?Sized> PosteriorEstimator for &P {
    fn sample(&self, x: &[f64], n: usize, rng: &mut dyn RngCore) -> Result<MixedSamples> {
        (**self).sample(x, n, rng)
    }

    fn discrete_marginals(&self, x: &[f64], rng: &mut dyn RngCore) -> Result<Vec<Vec<f64>>> {
        (**self).discrete_marginals(x, rng)
    }
}
