use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use super::Simulator;
use crate::error::{Error, Result};
use crate::estimator::{ArchConfig, MixedParamSpace, ObsTransform};
use crate::made::DiscreteSchema;
use crate::posterior::MixedSample;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// `θ_d ~ Bernoulli(½)`, `θ_c ~ N(0, 1)`, `x ~ N(θ_c + a·θ_d, σ²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianToy {
    pub a: f64,
    pub sigma: f64,
}

impl Default for GaussianToy {
    fn default() -> Self {
        Self { a: 2.0, sigma: 0.5 }
    }
}

impl GaussianToy {
    pub fn new(a: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !a.is_finite() {
            return Err(Error::Config(format!("invalid toy model a={a}, σ={sigma}")));
        }
        Ok(Self { a, sigma })
    }

    fn mean(&self, theta: &MixedSample) -> f64 {
        theta.theta_c[0] + self.a * theta.theta_d[0] as f64
    }
}

impl Simulator for GaussianToy {
    fn name(&self) -> &'static str {
        "gaussian_toy"
    }

    fn space(&self) -> MixedParamSpace {
        MixedParamSpace::new(
            DiscreteSchema::from_classes(&[2]).expect("valid schema"),
            vec!["theta_c".into()],
        )
        .expect("valid space")
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn obs_transforms(&self) -> Vec<ObsTransform> {
        vec![ObsTransform::Identity]
    }

    fn default_arch(&self) -> ArchConfig {
        ArchConfig::toy()
    }

    fn propose_prior(&self, rng: &mut dyn RngCore) -> MixedSample {
        let d = usize::from(rng.random_bool(0.5));
        MixedSample {
            theta_d: vec![d],
            theta_c: vec![rng.sample(StandardNormal)],
        }
    }

    fn simulate(&self, theta: &MixedSample, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        self.space().check(theta)?;
        let z: f64 = rng.sample(StandardNormal);
        Ok(vec![self.mean(theta) + self.sigma * z])
    }

    fn log_likelihood(&self, theta: &MixedSample, x: &[f64]) -> Result<f64> {
        self.space().check(theta)?;
        if x.len() != 1 {
            return Err(Error::shape("toy observation", 1, x.len()));
        }
        let r = (x[0] - self.mean(theta)) / self.sigma;
        Ok(-0.5 * r * r - self.sigma.ln() - HALF_LN_2PI)
    }
}
