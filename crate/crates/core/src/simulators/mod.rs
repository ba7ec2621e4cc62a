//! Benchmark generative models: priors, forward simulators and likelihoods.

mod coal;
mod queue;
mod toy;

pub use coal::{CoalChangepoint, COAL_DISASTERS, FIRST_YEAR, YEARS};
pub use queue::{expected_queue_length, TandemQueue, MIN_SERVERS, SERVER_CLASSES};
pub(crate) use queue::{PRIOR_MEDIANS, PRIOR_SCALE};
pub use toy::GaussianToy;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, DatasetMeta};
use crate::error::{Error, Result};
use crate::estimator::{ArchConfig, MixedParamSpace, ObsTransform};
use crate::nn::Matrix;
use crate::posterior::MixedSample;

pub trait Simulator: Send + Sync {
    fn name(&self) -> &'static str;
    fn space(&self) -> MixedParamSpace;
    fn obs_dim(&self) -> usize;
    fn obs_transforms(&self) -> Vec<ObsTransform>;
    fn default_arch(&self) -> ArchConfig;

    /// One draw from the untruncated prior.
    fn propose_prior(&self, rng: &mut dyn RngCore) -> MixedSample;

    /// Whether a prior draw survives the model's rejection rule.
    fn admissible(&self, _theta: &MixedSample) -> bool {
        true
    }

    /// One admissible prior draw and the number of rejected proposals.
    fn sample_prior(&self, rng: &mut dyn RngCore) -> (MixedSample, usize) {
        let mut rejected = 0;
        loop {
            let theta = self.propose_prior(rng);
            if self.admissible(&theta) {
                return (theta, rejected);
            }
            rejected += 1;
        }
    }

    fn simulate(&self, theta: &MixedSample, rng: &mut dyn RngCore) -> Result<Vec<f64>>;

    fn log_likelihood(&self, theta: &MixedSample, x: &[f64]) -> Result<f64>;
}

pub const MODEL_NAMES: [&str; 3] = ["gaussian_toy", "tandem_queue", "coal_changepoint"];

/// Simulator with default settings for a registered model name.
pub fn by_name(name: &str) -> Result<Box<dyn Simulator>> {
    match name {
        "gaussian_toy" => Ok(Box::new(GaussianToy::default())),
        "tandem_queue" => Ok(Box::new(TandemQueue::default())),
        "coal_changepoint" => Ok(Box::new(CoalChangepoint)),
        other => Err(Error::Input(format!(
            "unknown model '{other}' (expected one of {})",
            MODEL_NAMES.join(", ")
        ))),
    }
}

/// `n` admissible `(θ, x)` pairs from prior × simulator with a seeded stream.
pub fn simulate_dataset(sim: &dyn Simulator, n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = sim.space().k();
    let d = sim.obs_dim();
    let mut theta_d = Vec::with_capacity(n);
    let mut theta_c = Vec::with_capacity(n * k);
    let mut x = Vec::with_capacity(n * d);
    let mut rejected = 0;
    for _ in 0..n {
        let (theta, r) = sim.sample_prior(&mut rng);
        rejected += r;
        x.extend(sim.simulate(&theta, &mut rng)?);
        theta_c.extend_from_slice(&theta.theta_c);
        theta_d.push(theta.theta_d);
    }
    Dataset::new(
        theta_d,
        Matrix::from_vec(n, k, theta_c)?,
        Matrix::from_vec(n, d, x)?,
        DatasetMeta {
            simulator: sim.name().to_owned(),
            seed,
            n_requested: n,
            n_rejected: rejected,
        },
    )
}

/// `log Poisson(k; λ)` for a non-negative integer count `k`.
pub(crate) fn poisson_log_pmf(k: f64, lambda: f64) -> Result<f64> {
    if !(k >= 0.0) || k.fract() != 0.0 {
        return Err(Error::Input(format!("count {k} is not a non-negative integer")));
    }
    if lambda == 0.0 {
        return Ok(if k == 0.0 { 0.0 } else { f64::NEG_INFINITY });
    }
    Ok(k * lambda.ln() - lambda - statrs::function::gamma::ln_gamma(k + 1.0))
}

pub(crate) fn sample_poisson(lambda: f64, rng: &mut dyn RngCore) -> f64 {
    use rand::Rng;
    if lambda <= 0.0 {
        return 0.0;
    }
    rng.sample(rand_distr::Poisson::new(lambda).expect("positive rate"))
}
