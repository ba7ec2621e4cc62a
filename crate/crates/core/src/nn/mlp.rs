use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linear::{Linear, LinearGrad};
use super::matrix::Matrix;
use super::{Gradients, Parameterized};
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply<T: Real>(self, v: T) -> T {
        match self {
            Activation::Relu => v.max(T::zero()),
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }

    #[inline]
    fn derivative<T: Real>(self, pre: T) -> T {
        match self {
            Activation::Relu => {
                if pre > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                T::one() - t * t
            }
            Activation::Identity => T::one(),
        }
    }
}

/// Feed-forward network: activation after every layer but the last.
///
/// With `residual` set, each hidden-to-hidden layer of equal width adds its
/// activated output to its input (`h ← h + act(W·h + b)`).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    layers: Vec<Linear<T>>,
    activation: Activation,
    residual: bool,
}

/// Intermediate values kept by [`Mlp::forward_train`] for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache<T> {
    inputs: Vec<Matrix<T>>,
    pre: Vec<Matrix<T>>,
}

impl<T: Real> Mlp<T> {
    /// Dense network with widths `[input, hidden..., output]`.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config("an MLP needs at least input and output widths".into()));
        }
        let layers = widths
            .windows(2)
            .map(|w| Linear::new(w[0], w[1], rng))
            .collect();
        Ok(Self {
            layers,
            activation,
            residual: false,
        })
    }

    pub fn from_layers(layers: Vec<Linear<T>>, activation: Activation, residual: bool) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("an MLP needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape("Mlp layer chain", pair[0].out_dim(), pair[1].in_dim()));
            }
        }
        Ok(Self {
            layers,
            activation,
            residual,
        })
    }

    pub fn with_residual(mut self, residual: bool) -> Self {
        self.residual = residual;
        self
    }

    pub fn layers(&self) -> &[Linear<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear<T>] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn residual(&self) -> bool {
        self.residual
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    fn skips(&self, i: usize) -> bool {
        self.residual && i > 0 && self.layers[i].in_dim() == self.layers[i].out_dim()
    }

    /// Zero the output layer so the network emits its bias regardless of input.
    pub fn zero_output_layer(&mut self) {
        let last = self.layers.len() - 1;
        self.layers[last].weight.iter_mut().for_each(|w| *w = T::zero());
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(&h)?;
            if i < last {
                let act = self.activation;
                y.as_mut_slice().iter_mut().for_each(|v| *v = act.apply(*v));
                if self.skips(i) {
                    y.as_mut_slice()
                        .iter_mut()
                        .zip(h.as_slice())
                        .for_each(|(o, &r)| *o += r);
                }
            }
            h = y;
        }
        Ok(h)
    }

    pub fn forward_train(&self, x: &Matrix<T>) -> Result<(Matrix<T>, MlpCache<T>)> {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h)?;
            if i < last {
                let act = self.activation;
                let mut y = z.map(|v| act.apply(v));
                if self.skips(i) {
                    y.as_mut_slice()
                        .iter_mut()
                        .zip(h.as_slice())
                        .for_each(|(o, &r)| *o += r);
                }
                pre.push(z);
                inputs.push(std::mem::replace(&mut h, y));
            } else {
                inputs.push(std::mem::replace(&mut h, z));
            }
        }
        Ok((h, MlpCache { inputs, pre }))
    }

    /// Backpropagate `dout = ∂L/∂output`; returns `∂L/∂input` and gradients
    /// ordered like [`Parameterized::parameters`].
    pub fn backward(&self, cache: &MlpCache<T>, dout: &Matrix<T>) -> (Matrix<T>, Gradients<T>) {
        let n = self.layers.len();
        let mut grads: Vec<Option<LinearGrad<T>>> = (0..n).map(|_| None).collect();
        let (mut g, lg) = self.layers[n - 1].backward(&cache.inputs[n - 1], dout);
        grads[n - 1] = Some(lg);
        for i in (0..n - 1).rev() {
            let act = self.activation;
            let mut dpre = g.clone();
            dpre.as_mut_slice()
                .iter_mut()
                .zip(cache.pre[i].as_slice())
                .for_each(|(d, &p)| *d *= act.derivative(p));
            let (mut dx, lg) = self.layers[i].backward(&cache.inputs[i], &dpre);
            if self.skips(i) {
                dx.as_mut_slice()
                    .iter_mut()
                    .zip(g.as_slice())
                    .for_each(|(d, &r)| *d += r);
            }
            grads[i] = Some(lg);
            g = dx;
        }
        let flat = grads
            .into_iter()
            .flat_map(|lg| {
                let lg = lg.expect("every layer visited");
                [lg.weight, lg.bias]
            })
            .collect();
        (g, flat)
    }
}

impl<T: Real> Parameterized<T> for Mlp<T> {
    fn parameters(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}
