use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::{Gradients, Parameterized};
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub validation_fraction: f64,
    /// Epochs without validation improvement before stopping.
    pub patience_epochs: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            batch_size: 200,
            validation_fraction: 0.1,
            patience_epochs: 20,
            max_epochs: 500,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config("validation_fraction must lie in (0, 1)".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be positive".into()));
        }
        if n == 0 {
            return Err(Error::Config("empty dataset".into()));
        }
        let n_val = self.validation_size(n);
        if n_val == 0 || n_val >= n {
            return Err(Error::Config(format!(
                "validation split of {n_val} rows is unusable for {n} rows"
            )));
        }
        Ok(())
    }

    fn validation_size(&self, n: usize) -> usize {
        // Guard against 0.1 * 1000 = 100.00000000000001 rounding up.
        ((self.validation_fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
    }

    /// Seeded shuffle of `0..n`; the last `⌈fraction·n⌉` indices validate.
    pub fn split(&self, n: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        self.validate(n)?;
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_5b17);
        idx.shuffle(&mut rng);
        let n_val = self.validation_size(n);
        let val = idx.split_off(n - n_val);
        Ok((idx, val))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Validation loss before the first update.
    pub initial_validation_loss: f64,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were restored.
    pub best_epoch: usize,
    pub best_validation_loss: f64,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,validation_loss\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.validation_loss));
        }
        out
    }
}

/// A differentiable mean loss over rows of a fixed dataset.
pub trait Objective<T: Real> {
    type Model: Parameterized<T> + Clone;

    /// Mean loss over `rows`.
    fn loss(&self, model: &Self::Model, rows: &[usize]) -> Result<T>;

    /// Mean loss over `rows` and its gradient, ordered like
    /// [`Parameterized::parameters`].
    fn loss_and_grad(&self, model: &Self::Model, rows: &[usize]) -> Result<(T, Gradients<T>)>;
}

const EVAL_CHUNK: usize = 4096;

/// Attach the epoch and batch to a training error raised inside an objective.
fn locate(err: Error, epoch: usize, batch: usize) -> Error {
    match err {
        Error::Training { message, .. } => Error::Training { epoch, batch, message },
        other => other,
    }
}

fn mean_loss<T: Real, O: Objective<T>>(objective: &O, model: &O::Model, rows: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for chunk in rows.chunks(EVAL_CHUNK) {
        total += objective.loss(model, chunk)?.as_f64() * chunk.len() as f64;
    }
    Ok(total / rows.len() as f64)
}

/// Split `0..n` per `config`, then [`train_split`].
pub fn train<T: Real, O: Objective<T>>(
    model: &mut O::Model,
    objective: &O,
    n: usize,
    config: &TrainConfig,
) -> Result<TrainLog> {
    let (train_rows, val_rows) = config.split(n)?;
    train_split(model, objective, &train_rows, &val_rows, config)
}

/// Minibatch Adam with early stopping on validation loss.
///
/// Stops once `patience_epochs` epochs have passed without improvement (or at
/// `max_epochs`) and restores the parameters of the best epoch.
pub fn train_split<T: Real, O: Objective<T>>(
    model: &mut O::Model,
    objective: &O,
    train_rows: &[usize],
    val_rows: &[usize],
    config: &TrainConfig,
) -> Result<TrainLog> {
    if train_rows.is_empty() {
        return Err(Error::Config("empty training split".into()));
    }
    if val_rows.is_empty() {
        return Err(Error::Config("empty validation split".into()));
    }
    let shapes: Vec<usize> = model.parameters().iter().map(|p| p.len()).collect();
    let mut adam = Adam::new(AdamConfig::with_learning_rate(config.learning_rate), &shapes);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let initial = mean_loss(objective, model, val_rows)?;
    if !initial.is_finite() {
        return Err(Error::Training {
            epoch: 0,
            batch: 0,
            message: format!("non-finite initial validation loss {initial}"),
        });
    }
    let mut best = model.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut epochs = Vec::new();
    let mut order = train_rows.to_vec();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let (loss, grads) = objective
                .loss_and_grad(model, batch)
                .map_err(|e| locate(e, epoch, b))?;
            let loss = loss.as_f64();
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    batch: b,
                    message: format!("non-finite loss {loss}"),
                });
            }
            if grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Training {
                    epoch,
                    batch: b,
                    message: "non-finite gradient".into(),
                });
            }
            sum += loss * batch.len() as f64;
            adam.step(model.parameters_mut(), &grads)?;
        }
        let train_loss = sum / order.len() as f64;
        let validation_loss = mean_loss(objective, model, val_rows)?;
        if !validation_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                batch: 0,
                message: format!("non-finite validation loss {validation_loss}"),
            });
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            validation_loss,
        });
        if validation_loss < best_loss {
            best_loss = validation_loss;
            best_epoch = epoch;
            best = model.clone();
        }
        if epoch - best_epoch >= config.patience_epochs {
            break;
        }
    }
    *model = best;
    Ok(TrainLog {
        initial_validation_loss: initial,
        epochs,
        best_epoch,
        best_validation_loss: best_loss,
    })
}
