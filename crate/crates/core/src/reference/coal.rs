use rand::{Rng, RngCore};
use rand_distr::Gamma;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::made::log_sum_exp;
use crate::nn::Matrix;
use crate::posterior::{MixedSamples, PosteriorEstimator};
use crate::simulators::YEARS;

/// Exact posterior of the change-point model: conjugate Gamma conditionals
/// for both rates and a switch-point pmf from the closed-form marginal
/// likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct CoalExactPosterior {
    /// `log p(x | s)` up to an `s`-independent constant.
    pub log_marginals: Vec<f64>,
    pub pmf: Vec<f64>,
    /// `(shape, rate)` of `λ_early | s, x` and `λ_late | s, x`.
    pub gammas: Vec<[(f64, f64); 2]>,
}

impl CoalExactPosterior {
    pub fn new(x: &[f64]) -> Result<Self> {
        if x.len() != YEARS {
            return Err(Error::shape("coal observation", YEARS, x.len()));
        }
        if let Some(y) = x.iter().find(|&&y| !(y >= 0.0) || !y.is_finite()) {
            return Err(Error::Input(format!("disaster counts must be non-negative, got {y}")));
        }
        let total: f64 = x.iter().sum();
        let mut early = 0.0;
        let mut log_marginals = Vec::with_capacity(YEARS);
        let mut gammas = Vec::with_capacity(YEARS);
        for s in 0..YEARS {
            let segs = [(early, s as f64), (total - early, (YEARS - s) as f64)];
            // ∫ Exp(λ; 1) Π Poisson(y; λ) dλ ∝ Γ(S+1) / (n+1)^(S+1)
            log_marginals.push(segs.iter().map(|&(c, n)| ln_gamma(c + 1.0) - (c + 1.0) * (n + 1.0).ln()).sum());
            gammas.push(segs.map(|(c, n)| (c + 1.0, n + 1.0)));
            early += x[s];
        }
        let z: f64 = log_sum_exp(&log_marginals);
        let pmf = log_marginals.iter().map(|l| (l - z).exp()).collect();
        Ok(Self {
            log_marginals,
            pmf,
            gammas,
        })
    }

    pub fn mode(&self) -> usize {
        (0..self.pmf.len())
            .max_by(|&a, &b| self.pmf[a].total_cmp(&self.pmf[b]))
            .unwrap_or(0)
    }

    /// Posterior means of `(λ_early, λ_late)`.
    pub fn rate_means(&self) -> [f64; 2] {
        let mut m = [0.0; 2];
        for (p, g) in self.pmf.iter().zip(&self.gammas) {
            for j in 0..2 {
                m[j] += p * g[j].0 / g[j].1;
            }
        }
        m
    }

    pub fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Result<MixedSamples> {
        let cdf: Vec<f64> = self
            .pmf
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        let dists = self
            .gammas
            .iter()
            .map(|g| g.map(|(shape, rate)| Gamma::new(shape, 1.0 / rate).expect("positive Gamma parameters")))
            .collect::<Vec<_>>();
        let mut theta_d = Vec::with_capacity(n);
        let mut theta_c = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let u = rng.random::<f64>() * cdf[YEARS - 1];
            let s = cdf.partition_point(|&c| c <= u).min(YEARS - 1);
            theta_d.push(vec![s]);
            theta_c.push(rng.sample(dists[s][0]));
            theta_c.push(rng.sample(dists[s][1]));
        }
        MixedSamples::new(theta_d, Matrix::from_vec(n, 2, theta_c)?)
    }
}

/// [`CoalExactPosterior`] as a [`PosteriorEstimator`].
#[derive(Debug, Clone, Copy, Default)]
pub struct CoalReference;

impl PosteriorEstimator for CoalReference {
    fn sample(&self, x: &[f64], n: usize, rng: &mut dyn RngCore) -> Result<MixedSamples> {
        CoalExactPosterior::new(x)?.sample(n, rng)
    }

    fn discrete_marginals(&self, x: &[f64], _rng: &mut dyn RngCore) -> Result<Vec<Vec<f64>>> {
        Ok(vec![CoalExactPosterior::new(x)?.pmf])
    }
}
