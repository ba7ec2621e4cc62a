use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::posterior::{MixedSample, MixedSamples, PosteriorEstimator};
use crate::simulators::GaussianToy;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Closed-form posterior of the Gaussian toy model.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ToyPosterior {
    pub model: GaussianToy,
}

impl ToyPosterior {
    pub fn new(model: GaussianToy) -> Self {
        Self { model }
    }

    /// `P(θ_d = 1 | x)`.
    pub fn prob_d1(&self, x: f64) -> f64 {
        let (a, s2) = (self.model.a, self.model.sigma * self.model.sigma);
        let logit = a * (2.0 * x - a) / (2.0 * (s2 + 1.0));
        1.0 / (1.0 + (-logit).exp())
    }

    /// Mean and variance of `θ_c | θ_d, x`.
    pub fn conditional(&self, theta_d: usize, x: f64) -> (f64, f64) {
        let s2 = self.model.sigma * self.model.sigma;
        ((x - self.model.a * theta_d as f64) / (1.0 + s2), s2 / (1.0 + s2))
    }

    pub fn log_prob(&self, theta: &MixedSample, x: f64) -> Result<f64> {
        let d = theta.theta_d.first().copied().filter(|&d| d < 2);
        let (Some(d), [c]) = (d, theta.theta_c.as_slice()) else {
            return Err(Error::Input(format!("not a toy parameter: {theta:?}")));
        };
        let p1 = self.prob_d1(x);
        let pd = if d == 1 { p1 } else { 1.0 - p1 };
        let (m, v) = self.conditional(d, x);
        Ok(pd.ln() - 0.5 * (c - m).powi(2) / v - 0.5 * v.ln() - HALF_LN_2PI)
    }
}

impl PosteriorEstimator for ToyPosterior {
    fn sample(&self, x: &[f64], n: usize, rng: &mut dyn RngCore) -> Result<MixedSamples> {
        let [x] = x else {
            return Err(Error::shape("toy observation", 1, x.len()));
        };
        let p1 = self.prob_d1(*x);
        let mut theta_d = Vec::with_capacity(n);
        let mut theta_c = Vec::with_capacity(n);
        for _ in 0..n {
            let d = usize::from(rng.random::<f64>() < p1);
            let (m, v) = self.conditional(d, *x);
            theta_c.push(m + v.sqrt() * rng.sample::<f64, _>(StandardNormal));
            theta_d.push(vec![d]);
        }
        MixedSamples::new(theta_d, Matrix::from_vec(n, 1, theta_c)?)
    }

    fn discrete_marginals(&self, x: &[f64], _rng: &mut dyn RngCore) -> Result<Vec<Vec<f64>>> {
        let [x] = x else {
            return Err(Error::shape("toy observation", 1, x.len()));
        };
        let p1 = self.prob_d1(*x);
        Ok(vec![vec![1.0 - p1, p1]])
    }
}
