//! Minimal differentiable core: dense and masked layers, backpropagation,
//! Adam, z-scoring and a seeded training loop with early stopping.

mod adam;
pub mod checkpoint;
mod linear;
mod matrix;
mod mlp;
mod normalizer;
mod train;

#[cfg(test)]
mod tests;

pub use adam::{Adam, AdamConfig};
pub use linear::{Linear, LinearGrad};
pub use matrix::Matrix;
pub use mlp::{Activation, Mlp, MlpCache};
pub use normalizer::{Normalizer, DEFAULT_EPSILON};
pub use train::{train, train_split, EpochRecord, Objective, TrainConfig, TrainLog};

use crate::error::{Error, Result};
use crate::real::Real;

/// One gradient buffer per parameter tensor.
pub type Gradients<T> = Vec<Vec<T>>;

/// Anything with trainable parameter tensors in a fixed order.
pub trait Parameterized<T> {
    fn parameters(&self) -> Vec<&[T]>;
    fn parameters_mut(&mut self) -> Vec<&mut [T]>;

    fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }
}

/// Half mean squared error `½·mean_rows ‖f(x) − y‖²` of an [`Mlp`] on fixed
/// inputs and targets.
pub struct MseObjective<T> {
    pub inputs: Matrix<T>,
    pub targets: Matrix<T>,
}

impl<T: Real> Objective<T> for MseObjective<T> {
    type Model = Mlp<T>;

    fn loss(&self, model: &Mlp<T>, rows: &[usize]) -> Result<T> {
        let out = model.forward(&self.inputs.select_rows(rows))?;
        let y = self.targets.select_rows(rows);
        if out.cols() != y.cols() {
            return Err(Error::shape("MseObjective targets", out.cols(), y.cols()));
        }
        let half = T::lit(0.5);
        let sum: T = out
            .as_slice()
            .iter()
            .zip(y.as_slice())
            .map(|(&a, &b)| half * (a - b) * (a - b))
            .sum();
        Ok(sum / T::from_usize(rows.len()).unwrap())
    }

    fn loss_and_grad(&self, model: &Mlp<T>, rows: &[usize]) -> Result<(T, Gradients<T>)> {
        let (out, cache) = model.forward_train(&self.inputs.select_rows(rows))?;
        let y = self.targets.select_rows(rows);
        if out.cols() != y.cols() {
            return Err(Error::shape("MseObjective targets", out.cols(), y.cols()));
        }
        let n = T::from_usize(rows.len()).unwrap();
        let half = T::lit(0.5);
        let mut loss = T::zero();
        let mut dout = out.clone();
        for (d, &t) in dout.as_mut_slice().iter_mut().zip(y.as_slice()) {
            let r = *d - t;
            loss += half * r * r;
            *d = r / n;
        }
        let (_, grads) = model.backward(&cache, &dout);
        Ok((loss / n, grads))
    }
}

/// Central finite-difference gradient of `loss` with respect to every
/// parameter of `model`. Used to validate analytic gradients.
pub fn finite_difference_gradient<T, M, F>(model: &M, step: f64, mut loss: F) -> Result<Gradients<T>>
where
    T: Real,
    M: Parameterized<T> + Clone,
    F: FnMut(&M) -> Result<T>,
{
    let shapes: Vec<usize> = model.parameters().iter().map(|p| p.len()).collect();
    let h = T::lit(step);
    let two_h = T::lit(2.0 * step);
    let mut probe = model.clone();
    let mut grads = Vec::with_capacity(shapes.len());
    for (t, &len) in shapes.iter().enumerate() {
        let mut g = vec![T::zero(); len];
        for (i, gi) in g.iter_mut().enumerate() {
            let orig = probe.parameters()[t][i];
            probe.parameters_mut()[t][i] = orig + h;
            let up = loss(&probe)?;
            probe.parameters_mut()[t][i] = orig - h;
            let down = loss(&probe)?;
            probe.parameters_mut()[t][i] = orig;
            *gi = (up - down) / two_h;
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Largest relative error `|a − n| / max(|a|, |n|, floor)` between two
/// gradient sets.
pub fn max_relative_error<T: Real>(analytic: &Gradients<T>, numeric: &Gradients<T>, floor: f64) -> f64 {
    analytic
        .iter()
        .flatten()
        .zip(numeric.iter().flatten())
        .map(|(&a, &n)| {
            let (a, n) = (a.as_f64(), n.as_f64());
            (a - n).abs() / a.abs().max(n.abs()).max(floor)
        })
        .fold(0.0, f64::max)
}
