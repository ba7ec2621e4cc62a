use rand::{Rng, RngCore};
use rand_distr::Exp1;

use super::{poisson_log_pmf, sample_poisson, Simulator};
use crate::error::{Error, Result};
use crate::estimator::{ArchConfig, MixedParamSpace, ObsTransform};
use crate::made::{DiscreteDim, DiscreteSchema};
use crate::posterior::MixedSample;

pub const FIRST_YEAR: usize = 1851;
pub const YEARS: usize = 111;

/// Annual British coal-mining disaster counts, 1851–1961. The two missing
/// years (1890 and 1935) are filled with the rounded mean of their
/// neighbours.
pub const COAL_DISASTERS: [f64; YEARS] = [
    4., 5., 4., 0., 1., 4., 3., 4., 0., 6., 3., 3., 4., 0., 2., 6., //
    3., 3., 5., 4., 5., 3., 1., 4., 4., 1., 5., 5., 3., 4., 2., 5., //
    2., 2., 3., 4., 2., 1., 3., 2., 2., 1., 1., 1., 1., 3., 0., 0., //
    1., 0., 1., 1., 0., 0., 3., 1., 0., 3., 2., 2., 0., 1., 1., 1., //
    0., 1., 0., 1., 0., 0., 0., 2., 1., 0., 0., 0., 1., 1., 0., 2., //
    3., 3., 1., 2., 2., 1., 1., 1., 1., 2., 4., 2., 0., 0., 0., 1., //
    4., 0., 0., 0., 1., 0., 0., 0., 0., 0., 1., 0., 0., 1., 0.,
];

/// Poisson counts whose rate switches from `λ_early` to `λ_late` at year
/// index `s` (year `1851 + s`).
///
/// `θ_d = (s)`, `θ_c = (λ_early, λ_late)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CoalChangepoint;

impl CoalChangepoint {
    fn rates(theta: &MixedSample) -> impl Iterator<Item = f64> + '_ {
        let s = theta.theta_d[0];
        (0..YEARS).map(move |t| if t < s { theta.theta_c[0] } else { theta.theta_c[1] })
    }

    fn check_rates(theta: &MixedSample) -> Result<()> {
        if theta.theta_c.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::Input(format!("rates must be positive, got {:?}", theta.theta_c)));
        }
        Ok(())
    }
}

impl Simulator for CoalChangepoint {
    fn name(&self) -> &'static str {
        "coal_changepoint"
    }

    fn space(&self) -> MixedParamSpace {
        MixedParamSpace::new(
            DiscreteSchema::new(vec![DiscreteDim {
                name: "switch_year".into(),
                classes: YEARS,
            }])
            .expect("valid schema"),
            vec!["lambda_early".into(), "lambda_late".into()],
        )
        .expect("valid space")
    }

    fn obs_dim(&self) -> usize {
        YEARS
    }

    fn obs_transforms(&self) -> Vec<ObsTransform> {
        vec![ObsTransform::Sqrt; YEARS]
    }

    fn default_arch(&self) -> ArchConfig {
        ArchConfig::coal()
    }

    fn propose_prior(&self, rng: &mut dyn RngCore) -> MixedSample {
        MixedSample {
            theta_d: vec![rng.random_range(0..YEARS)],
            theta_c: vec![rng.sample(Exp1), rng.sample(Exp1)],
        }
    }

    fn simulate(&self, theta: &MixedSample, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        self.space().check(theta)?;
        Self::check_rates(theta)?;
        Ok(Self::rates(theta).map(|l| sample_poisson(l, rng)).collect())
    }

    fn log_likelihood(&self, theta: &MixedSample, x: &[f64]) -> Result<f64> {
        self.space().check(theta)?;
        Self::check_rates(theta)?;
        if x.len() != YEARS {
            return Err(Error::shape("coal observation", YEARS, x.len()));
        }
        Self::rates(theta).zip(x).map(|(l, &y)| poisson_log_pmf(y, l)).sum()
    }
}
