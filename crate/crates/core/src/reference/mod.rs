//! Ground-truth posteriors used to score and calibrate learned estimators.

mod coal;
mod queue;
mod toy;

pub use coal::{CoalExactPosterior, CoalReference};
pub use queue::{ConfigurationDiagnostics, QueueIsPosterior, QueueReference};
pub use toy::ToyPosterior;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::posterior::{MixedSamples, PosteriorEstimator};
use crate::simulators::Simulator;

/// The reference posterior for a named benchmark model.
pub fn for_model(name: &str) -> Result<Box<dyn PosteriorEstimator>> {
    use crate::simulators::{GaussianToy, TandemQueue};
    match name {
        "gaussian_toy" => Ok(Box::new(ToyPosterior::new(GaussianToy::default()))),
        "coal_changepoint" => Ok(Box::new(CoalReference)),
        "tandem_queue" => Ok(Box::new(QueueReference {
            model: TandemQueue::default(),
            ..QueueReference::default()
        })),
        other => Err(Error::Input(format!("no reference posterior for model '{other}'"))),
    }
}

/// Samples the prior and ignores the observation.
pub struct PriorPosterior<'a> {
    pub simulator: &'a dyn Simulator,
}

impl PosteriorEstimator for PriorPosterior<'_> {
    fn sample(&self, _x: &[f64], n: usize, rng: &mut dyn RngCore) -> Result<MixedSamples> {
        let draws: Vec<_> = (0..n).map(|_| self.simulator.sample_prior(rng).0).collect();
        MixedSamples::from_samples(&draws, self.simulator.space().k())
    }

    fn discrete_marginals(&self, x: &[f64], rng: &mut dyn RngCore) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .sample(x, 10_000, rng)?
            .discrete_frequencies(&self.simulator.space().discrete))
    }
}
