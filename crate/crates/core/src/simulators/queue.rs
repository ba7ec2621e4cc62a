use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use statrs::function::erf::erfc;

use super::{poisson_log_pmf, sample_poisson, Simulator};
use crate::error::{Error, Result};
use crate::estimator::{ArchConfig, MixedParamSpace, ObsTransform};
use crate::made::{DiscreteDim, DiscreteSchema};
use crate::posterior::MixedSample;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Expected number waiting in an M/M/c queue with arrival rate `gamma`,
/// per-server rate `mu` and `c` servers.
pub fn expected_queue_length(gamma: f64, mu: f64, c: usize) -> Result<f64> {
    if !(gamma > 0.0 && mu > 0.0) || c == 0 {
        return Err(Error::Input(format!("invalid queue γ={gamma}, μ={mu}, c={c}")));
    }
    let r = gamma / mu;
    let rho = r / c as f64;
    if rho >= 1.0 {
        return Err(Error::Unstable { rho });
    }
    // Σ_{n<c} rⁿ/n! and r^c/c!
    let mut term = 1.0;
    let mut head = 0.0;
    for n in 0..c {
        head += term;
        term *= r / (n + 1) as f64;
    }
    let tail = term;
    let pi0 = 1.0 / (head + tail / (1.0 - rho));
    Ok(tail * rho * pi0 / ((1.0 - rho) * (1.0 - rho)))
}

/// Two M/M/c stations in tandem.
///
/// `θ_d = (c₁ − 2, c₂ − 2)`, `θ_c = (γ, μ₁, μ₂)`, and
/// `x = (n_arr, n_comp,1, n_comp,2, q₁, q₂)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TandemQueue {
    pub horizon: f64,
    pub sigma_obs: f64,
    /// Draws with a larger expected queue length at either station are discarded.
    pub max_expected_length: f64,
}

impl Default for TandemQueue {
    fn default() -> Self {
        Self {
            horizon: 100.0,
            sigma_obs: 0.1,
            max_expected_length: 10.0,
        }
    }
}

pub const MIN_SERVERS: usize = 2;
pub const SERVER_CLASSES: usize = 5;
pub(crate) const PRIOR_SCALE: f64 = 0.3;
pub(crate) const PRIOR_MEDIANS: [f64; 3] = [9.0, 8.0, 5.0];

impl TandemQueue {
    pub fn servers(theta: &MixedSample) -> [usize; 2] {
        [theta.theta_d[0] + MIN_SERVERS, theta.theta_d[1] + MIN_SERVERS]
    }

    /// `(E[Q₁], E[Q₂])`, or an error if either station is unstable.
    pub fn expected_lengths(&self, theta: &MixedSample) -> Result<[f64; 2]> {
        let [c1, c2] = Self::servers(theta);
        let g = theta.theta_c[0];
        Ok([
            expected_queue_length(g, theta.theta_c[1], c1)?,
            expected_queue_length(g, theta.theta_c[2], c2)?,
        ])
    }

    fn truncated_normal(&self, mean: f64, rng: &mut dyn RngCore) -> f64 {
        loop {
            let z: f64 = rng.sample(StandardNormal);
            let q = mean + self.sigma_obs * z;
            if q >= 0.0 {
                return q;
            }
        }
    }

    /// `log` density of `N(mean, σ²)` truncated to `[0, ∞)`.
    pub fn truncated_normal_log_pdf(&self, q: f64, mean: f64) -> f64 {
        if q < 0.0 {
            return f64::NEG_INFINITY;
        }
        let s = self.sigma_obs;
        let z = (q - mean) / s;
        // P(N(mean, σ²) ≥ 0) = Φ(mean/σ)
        let mass = 0.5 * erfc(-mean / (s * std::f64::consts::SQRT_2));
        -0.5 * z * z - HALF_LN_2PI - s.ln() - mass.ln()
    }
}

impl Simulator for TandemQueue {
    fn name(&self) -> &'static str {
        "tandem_queue"
    }

    fn space(&self) -> MixedParamSpace {
        let dim = |name: &str| DiscreteDim {
            name: name.into(),
            classes: SERVER_CLASSES,
        };
        MixedParamSpace::new(
            DiscreteSchema::new(vec![dim("c1"), dim("c2")]).expect("valid schema"),
            vec!["gamma".into(), "mu1".into(), "mu2".into()],
        )
        .expect("valid space")
    }

    fn obs_dim(&self) -> usize {
        5
    }

    fn obs_transforms(&self) -> Vec<ObsTransform> {
        use ObsTransform::*;
        vec![Identity, Identity, Identity, Log1p, Log1p]
    }

    fn default_arch(&self) -> ArchConfig {
        ArchConfig::queue()
    }

    fn propose_prior(&self, rng: &mut dyn RngCore) -> MixedSample {
        let theta_d = vec![rng.random_range(0..SERVER_CLASSES), rng.random_range(0..SERVER_CLASSES)];
        let theta_c = PRIOR_MEDIANS
            .iter()
            .map(|m| (m.ln() + PRIOR_SCALE * rng.sample::<f64, _>(StandardNormal)).exp())
            .collect();
        MixedSample { theta_d, theta_c }
    }

    fn admissible(&self, theta: &MixedSample) -> bool {
        match self.expected_lengths(theta) {
            Ok(eq) => eq.iter().all(|&q| q <= self.max_expected_length),
            Err(_) => false,
        }
    }

    fn simulate(&self, theta: &MixedSample, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        self.space().check(theta)?;
        let eq = self.expected_lengths(theta)?;
        if eq.iter().any(|&q| q > self.max_expected_length) {
            return Err(Error::Input(format!("near-unstable configuration with E[Q] = {eq:?}")));
        }
        let rate = theta.theta_c[0] * self.horizon;
        let mut x = Vec::with_capacity(5);
        for _ in 0..3 {
            x.push(sample_poisson(rate, rng));
        }
        for q in eq {
            x.push(self.truncated_normal(q, rng));
        }
        Ok(x)
    }

    fn log_likelihood(&self, theta: &MixedSample, x: &[f64]) -> Result<f64> {
        self.space().check(theta)?;
        if x.len() != 5 {
            return Err(Error::shape("queue observation", 5, x.len()));
        }
        let eq = self.expected_lengths(theta)?;
        let rate = theta.theta_c[0] * self.horizon;
        let mut ll = 0.0;
        for &count in &x[..3] {
            ll += poisson_log_pmf(count, rate)?;
        }
        for (q, m) in x[3..].iter().zip(eq) {
            ll += self.truncated_normal_log_pdf(*q, m);
        }
        Ok(ll)
    }
}
