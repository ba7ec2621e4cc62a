//! Sample-based accuracy metrics: classifier two-sample tests and
//! posterior-predictive error.

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::MixedParamSpace;
use crate::made::DiscreteSchema;
use crate::nn::{train_split, Activation, Gradients, Matrix, Mlp, Objective, TrainConfig};
use crate::posterior::{MixedSamples, PosteriorEstimator};
use crate::simulators::Simulator;

/// Minimum size of each sample set.
pub const C2ST_MIN_SAMPLES: usize = 100;
const MAX_RESHUFFLES: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct C2stConfig {
    pub folds: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience_epochs: usize,
    /// Share of each training split held out for early stopping.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for C2stConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            hidden: 64,
            hidden_layers: 2,
            learning_rate: 1e-3,
            batch_size: 128,
            max_epochs: 200,
            patience_epochs: 10,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct C2stResult {
    /// Mean held-out accuracy over folds.
    pub score: f64,
    pub fold_accuracies: Vec<f64>,
    pub n_a: usize,
    pub n_b: usize,
    pub config: C2stConfig,
}

/// Mean logistic loss of a single-logit classifier.
struct Bce<'a> {
    inputs: &'a Matrix<f64>,
    labels: &'a [f64],
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl Objective<f64> for Bce<'_> {
    type Model = Mlp<f64>;

    fn loss(&self, model: &Mlp<f64>, rows: &[usize]) -> Result<f64> {
        let z = model.forward(&self.inputs.select_rows(rows))?;
        let total: f64 = rows
            .iter()
            .zip(z.as_slice())
            .map(|(&r, &z)| softplus(z) - self.labels[r] * z)
            .sum();
        Ok(total / rows.len() as f64)
    }

    fn loss_and_grad(&self, model: &Mlp<f64>, rows: &[usize]) -> Result<(f64, Gradients<f64>)> {
        let (z, cache) = model.forward_train(&self.inputs.select_rows(rows))?;
        let n = rows.len() as f64;
        let mut loss = 0.0;
        let mut dz = z.clone();
        for ((d, &z), &r) in dz.as_mut_slice().iter_mut().zip(z.as_slice()).zip(rows) {
            let y = self.labels[r];
            loss += softplus(z) - y * z;
            *d = (1.0 / (1.0 + (-z).exp()) - y) / n;
        }
        let (_, grads) = model.backward(&cache, &dz);
        Ok((loss / n, grads))
    }
}

/// Z-score columns with statistics from `train` rows; near-constant
/// columns keep unit scale.
fn standardize(features: &Matrix<f64>, train: &[usize]) -> Matrix<f64> {
    let d = features.cols();
    let n = train.len() as f64;
    let mut mean = vec![0.0; d];
    let mut var = vec![0.0; d];
    for &r in train {
        for (m, v) in mean.iter_mut().zip(features.row(r)) {
            *m += v / n;
        }
    }
    for &r in train {
        for ((s, m), v) in var.iter_mut().zip(&mean).zip(features.row(r)) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let std: Vec<f64> = var.iter().map(|v| if v.sqrt() < 1e-6 { 1.0 } else { v.sqrt() }).collect();
    let mut out = features.clone();
    for i in 0..out.rows() {
        for ((o, m), s) in out.row_mut(i).iter_mut().zip(&mean).zip(&std) {
            *o = (*o - m) / s;
        }
    }
    out
}

fn fold_assignment(labels: &[f64], folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    for attempt in 0..MAX_RESHUFFLES {
        let mut idx: Vec<usize> = (0..labels.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt)));
        let parts: Vec<Vec<usize>> = (0..folds).map(|f| idx.iter().copied().skip(f).step_by(folds).collect()).collect();
        let mixed = |rows: &[usize]| {
            let ones = rows.iter().filter(|&&r| labels[r] == 1.0).count();
            ones > 0 && ones < rows.len()
        };
        if parts.iter().all(|p| mixed(p)) {
            return Ok(parts);
        }
    }
    Err(Error::Input(format!(
        "every shuffle in {MAX_RESHUFFLES} attempts produced a single-class fold"
    )))
}

/// Cross-validated accuracy of a small MLP separating rows of `a` from
/// rows of `b`. Near 0.5 means indistinguishable.
pub fn c2st(a: &Matrix<f64>, b: &Matrix<f64>, config: &C2stConfig) -> Result<C2stResult> {
    if a.cols() != b.cols() {
        return Err(Error::shape("c2st feature dimension", a.cols(), b.cols()));
    }
    if a.rows() < C2ST_MIN_SAMPLES || b.rows() < C2ST_MIN_SAMPLES {
        return Err(Error::Input(format!(
            "c2st needs at least {C2ST_MIN_SAMPLES} samples per set, got {} and {}",
            a.rows(),
            b.rows()
        )));
    }
    if config.folds < 2 {
        return Err(Error::Config("c2st needs at least two folds".into()));
    }
    if !a.all_finite() || !b.all_finite() {
        return Err(Error::Input("non-finite c2st samples".into()));
    }
    let mut features = Matrix::zeros(a.rows() + b.rows(), a.cols());
    features.as_mut_slice()[..a.as_slice().len()].copy_from_slice(a.as_slice());
    features.as_mut_slice()[a.as_slice().len()..].copy_from_slice(b.as_slice());
    let labels: Vec<f64> = (0..features.rows()).map(|i| f64::from(u8::from(i >= a.rows()))).collect();
    let folds = fold_assignment(&labels, config.folds, config.seed)?;

    let mut widths = vec![a.cols()];
    widths.extend(std::iter::repeat_n(config.hidden, config.hidden_layers));
    widths.push(1);
    let mut fold_accuracies = Vec::with_capacity(config.folds);
    for (f, test) in folds.iter().enumerate() {
        let mut train: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, p)| p.iter().copied())
            .collect();
        train.sort_unstable();
        let x = standardize(&features, &train);
        let fold_seed = config.seed.wrapping_mul(31).wrapping_add(f as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(fold_seed);
        train.shuffle(&mut rng);
        let n_val = ((train.len() as f64 * config.validation_fraction).ceil() as usize).max(1);
        let val = train.split_off(train.len() - n_val);
        let mut model = Mlp::new(&widths, Activation::Relu, &mut rng)?;
        let objective = Bce {
            inputs: &x,
            labels: &labels,
        };
        let tc = TrainConfig {
            learning_rate: config.learning_rate,
            batch_size: config.batch_size,
            validation_fraction: config.validation_fraction,
            patience_epochs: config.patience_epochs,
            max_epochs: config.max_epochs,
            seed: fold_seed,
        };
        train_split(&mut model, &objective, &train, &val, &tc)?;
        let z = model.forward(&x.select_rows(test))?;
        let correct = test
            .iter()
            .zip(z.as_slice())
            .filter(|(&r, &z)| (z > 0.0) == (labels[r] == 1.0))
            .count();
        fold_accuracies.push(correct as f64 / test.len() as f64);
    }
    Ok(C2stResult {
        score: fold_accuracies.iter().sum::<f64>() / fold_accuracies.len() as f64,
        fold_accuracies,
        n_a: a.rows(),
        n_b: b.rows(),
        config: config.clone(),
    })
}

/// [`c2st`] on mixed samples encoded as `[one-hot(θ_d) ∥ θ_c]`.
pub fn c2st_mixed(
    a: &MixedSamples,
    b: &MixedSamples,
    schema: &DiscreteSchema,
    config: &C2stConfig,
) -> Result<C2stResult> {
    c2st(&a.encode(schema)?, &b.encode(schema)?, config)
}

/// Joint and per-dimension C2ST between two posteriors at one observation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorComparison {
    pub joint: f64,
    /// Discrete dimensions first, then continuous, in schema order.
    pub marginals: Vec<(String, f64)>,
}

impl PosteriorComparison {
    pub fn mean_marginal(&self) -> f64 {
        self.marginals.iter().map(|m| m.1).sum::<f64>() / self.marginals.len().max(1) as f64
    }
}

/// Draw `n` samples from each posterior at `x` and compare them jointly and
/// one dimension at a time.
pub fn compare_posteriors(
    candidate: &dyn PosteriorEstimator,
    reference: &dyn PosteriorEstimator,
    x: &[f64],
    n: usize,
    space: &MixedParamSpace,
    config: &C2stConfig,
    rng: &mut dyn RngCore,
) -> Result<PosteriorComparison> {
    let a = candidate.sample(x, n, rng)?;
    let b = reference.sample(x, n, rng)?;
    let schema = &space.discrete;
    let joint = c2st_mixed(&a, &b, schema, config)?.score;
    let mut marginals = Vec::with_capacity(space.l() + space.k());
    for (i, dim) in schema.dims().iter().enumerate() {
        let one = DiscreteSchema::from_classes(&[dim.classes])?;
        let pick = |s: &MixedSamples| -> Result<Matrix<f64>> {
            let col = MixedSamples::new(s.theta_d.iter().map(|t| vec![t[i]]).collect(), Matrix::zeros(s.len(), 0))?;
            col.encode(&one)
        };
        marginals.push((dim.name.clone(), c2st(&pick(&a)?, &pick(&b)?, config)?.score));
    }
    for (j, name) in space.continuous.iter().enumerate() {
        let (ca, cb) = (a.theta_c.columns(j, j + 1), b.theta_c.columns(j, j + 1));
        marginals.push((name.clone(), c2st(&ca, &cb, config)?.score));
    }
    Ok(PosteriorComparison { joint, marginals })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictiveMse {
    /// Mean over test pairs and features.
    pub mse: f64,
    pub per_feature: Vec<f64>,
    pub n_test: usize,
    /// Posterior draws the simulator refused and that were redrawn.
    pub resampled: usize,
}

/// Redraws allowed per test pair before giving up.
const MAX_REDRAWS: usize = 1000;

/// Squared error between an observation and one re-simulation from one
/// posterior draw, both in the simulator's transformed observation space,
/// averaged over `n_test` prior-predictive pairs.
pub fn predictive_mse(
    estimator: &dyn PosteriorEstimator,
    model: &dyn Simulator,
    n_test: usize,
    rng: &mut dyn RngCore,
) -> Result<PredictiveMse> {
    if n_test == 0 {
        return Err(Error::Config("n_test must be positive".into()));
    }
    let transforms = model.obs_transforms();
    let d = model.obs_dim();
    let mut per_feature = vec![0.0; d];
    let mut resampled = 0;
    for _ in 0..n_test {
        let (theta, _) = model.sample_prior(rng);
        let x = model.simulate(&theta, rng)?;
        let mut redraws = 0;
        let x_post = loop {
            let draw = estimator.sample(&x, 1, rng)?.get(0);
            if model.admissible(&draw) {
                if let Ok(xp) = model.simulate(&draw, rng) {
                    break xp;
                }
            }
            redraws += 1;
            if redraws > MAX_REDRAWS {
                return Err(Error::Input(format!(
                    "simulator rejected {MAX_REDRAWS} consecutive posterior draws"
                )));
            }
        };
        resampled += redraws;
        for (j, t) in transforms.iter().enumerate() {
            let e = t.apply(x[j])? - t.apply(x_post[j])?;
            per_feature[j] += e * e / n_test as f64;
        }
    }
    Ok(PredictiveMse {
        mse: per_feature.iter().sum::<f64>() / d as f64,
        per_feature,
        n_test,
        resampled,
    })
}

#[cfg(test)]
mod tests;
