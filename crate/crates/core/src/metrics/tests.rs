use super::*;
use crate::estimator::{ArchConfig, MixedParamSpace, ObsTransform};
use crate::posterior::MixedSample;
use crate::reference::{PriorPosterior, ToyPosterior};
use crate::simulators::GaussianToy;
use rand::Rng;
use rand_distr::StandardNormal;

fn gaussian(n: usize, d: usize, mean: f64, sd: f64, seed: u64) -> Matrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * d).map(|_| mean + sd * rng.sample::<f64, _>(StandardNormal)).collect();
    Matrix::from_vec(n, d, data).unwrap()
}

#[test]
fn identical_distributions_score_near_chance() {
    let r = c2st(&gaussian(1000, 3, 0.0, 1.0, 1), &gaussian(1000, 3, 0.0, 1.0, 2), &C2stConfig::default()).unwrap();
    assert!((0.45..=0.55).contains(&r.score), "{}", r.score);
    assert_eq!(r.fold_accuracies.len(), 5);
}

#[test]
fn disjoint_supports_are_separated() {
    let r = c2st(&gaussian(1000, 1, 0.0, 0.1, 1), &gaussian(1000, 1, 10.0, 0.1, 2), &C2stConfig::default()).unwrap();
    assert!(r.score > 0.99, "{}", r.score);
}

#[test]
fn unit_mean_shift_reaches_bayes_accuracy() {
    // Bayes-optimal accuracy for N(0,1) vs N(1,1) is Φ(1/2).
    let bayes = 0.691_462_461_274_013_1;
    let r = c2st(&gaussian(5000, 1, 0.0, 1.0, 3), &gaussian(5000, 1, 1.0, 1.0, 4), &C2stConfig::default()).unwrap();
    assert!((r.score - bayes).abs() < 0.03, "{}", r.score);
}

#[test]
fn swapping_sets_is_symmetric() {
    let (a, b) = (gaussian(1000, 2, 0.0, 1.0, 5), gaussian(1000, 2, 0.5, 1.0, 6));
    let ab = c2st(&a, &b, &C2stConfig::default()).unwrap().score;
    let ba = c2st(&b, &a, &C2stConfig::default()).unwrap().score;
    assert!((ab - ba).abs() <= 0.02, "{ab} vs {ba}");
}

#[test]
fn score_grows_with_separation() {
    let base = gaussian(1000, 1, 0.0, 1.0, 7);
    let scores: Vec<f64> = [0.0, 0.5, 1.0, 2.0]
        .iter()
        .map(|&gap| c2st(&base, &gaussian(1000, 1, gap, 1.0, 8), &C2stConfig::default()).unwrap().score)
        .collect();
    for w in scores.windows(2) {
        assert!(w[1] >= w[0] - 0.02, "{scores:?}");
    }
    assert!(scores[3] > 0.8, "{scores:?}");
}

#[test]
fn invalid_inputs_are_rejected() {
    let cfg = C2stConfig::default();
    assert!(matches!(
        c2st(&gaussian(200, 2, 0.0, 1.0, 1), &gaussian(200, 3, 0.0, 1.0, 1), &cfg),
        Err(Error::Shape { .. })
    ));
    assert!(matches!(
        c2st(&gaussian(99, 2, 0.0, 1.0, 1), &gaussian(200, 2, 0.0, 1.0, 1), &cfg),
        Err(Error::Input(_))
    ));
    assert!(fold_assignment(&[1.0; 10], 5, 0).is_err());
    assert_eq!(fold_assignment(&[0.0, 1.0, 0.0, 1.0], 2, 0).map(|f| f.len()).ok(), Some(2));
}

#[test]
fn mixed_encoding_separates_distinct_posteriors() {
    let toy = ToyPosterior::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = toy.sample(&[-0.5], 1000, &mut rng).unwrap();
    let b = toy.sample(&[2.5], 1000, &mut rng).unwrap();
    let c = toy.sample(&[2.5], 1000, &mut rng).unwrap();
    let schema = DiscreteSchema::from_classes(&[2]).unwrap();
    let cfg = C2stConfig::default();
    assert!(c2st_mixed(&a, &b, &schema, &cfg).unwrap().score > 0.95);
    assert!(c2st_mixed(&b, &c, &schema, &cfg).unwrap().score < 0.56);
}

#[test]
fn exact_toy_posterior_predictive_error() {
    // x_o and a re-simulation from an exact posterior draw are exchangeable
    // around the latent mean, so the error is 2σ² (quadrature agrees).
    let toy = GaussianToy::default();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let exact = predictive_mse(&ToyPosterior::new(toy), &toy, 20_000, &mut rng).unwrap();
    assert!((exact.mse - 0.5).abs() < 0.03, "{}", exact.mse);
    // Prior predictive: 2·Var(x) = 2(σ² + 1 + a²/4).
    let prior = predictive_mse(&PriorPosterior { simulator: &toy }, &toy, 20_000, &mut rng).unwrap();
    assert!((prior.mse - 4.5).abs() < 0.2, "{}", prior.mse);
    assert_eq!(exact.resampled, 0);
}

/// `x = θ_c` with no noise and no discrete part.
struct Echo;

impl Simulator for Echo {
    fn name(&self) -> &'static str {
        "echo"
    }
    fn space(&self) -> MixedParamSpace {
        MixedParamSpace::new(DiscreteSchema::from_classes(&[]).unwrap(), vec!["v".into()]).unwrap()
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
        MixedSample {
            theta_d: vec![],
            theta_c: vec![rng.sample(StandardNormal)],
        }
    }
    fn simulate(&self, theta: &MixedSample, _rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        Ok(theta.theta_c.clone())
    }
    fn log_likelihood(&self, _theta: &MixedSample, _x: &[f64]) -> Result<f64> {
        Ok(0.0)
    }
}

struct EchoPosterior;

impl PosteriorEstimator for EchoPosterior {
    fn sample(&self, x: &[f64], n: usize, _rng: &mut dyn RngCore) -> Result<MixedSamples> {
        MixedSamples::new(vec![vec![]; n], Matrix::repeat_row(x, n))
    }
    fn discrete_marginals(&self, _x: &[f64], _rng: &mut dyn RngCore) -> Result<Vec<Vec<f64>>> {
        Ok(vec![])
    }
}

#[test]
fn noiseless_exact_posterior_has_zero_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let r = predictive_mse(&EchoPosterior, &Echo, 100, &mut rng).unwrap();
    assert_eq!(r.mse, 0.0);
    assert!(predictive_mse(&EchoPosterior, &Echo, 0, &mut rng).is_err());
}

#[test]
fn comparison_reports_every_dimension() {
    let toy = GaussianToy::default();
    let exact = ToyPosterior::new(toy);
    let prior = PriorPosterior { simulator: &toy };
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cfg = C2stConfig::default();
    let same = compare_posteriors(&exact, &exact, &[2.5], 1000, &toy.space(), &cfg, &mut rng).unwrap();
    assert_eq!(same.marginals.len(), 2);
    assert!(same.joint < 0.56 && same.mean_marginal() < 0.56, "{same:?}");
    let off = compare_posteriors(&exact, &prior, &[2.5], 1000, &toy.space(), &cfg, &mut rng).unwrap();
    assert!(off.joint > 0.75 && off.marginals.iter().all(|m| m.1 > 0.6), "{off:?}");
}
