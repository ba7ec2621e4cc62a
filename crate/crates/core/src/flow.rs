//! Conditional neural spline flow built from rational-quadratic coupling
//! transforms.
//!
//! Transform `t` leaves `⌊k/2⌋` coordinates untouched and pushes the other
//! `⌈k/2⌉` through splines whose parameters come from an MLP on
//! `[pass-through ∥ condition]`. Odd transforms see the coordinates in
//! reversed order. With `k = 1` the pass-through set is empty and each
//! transform is a conditional 1-D spline.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Gradients, Matrix, Mlp, MlpCache, Parameterized};
use crate::real::Real;
use crate::spline::{forward_backward, identity_derivative_raw, raw_param_count, RqSpline};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub num_transforms: usize,
    pub hidden_features: usize,
    /// Hidden layers per conditioner; layers after the first are residual.
    pub blocks: usize,
    pub bins: usize,
    pub tail_bound: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            num_transforms: 5,
            hidden_features: 32,
            blocks: 4,
            bins: 10,
            tail_bound: 5.0,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_transforms == 0 || self.hidden_features == 0 || self.blocks == 0 {
            return Err(Error::Config(
                "flow needs at least one transform, one block and a positive width".into(),
            ));
        }
        if self.bins < 2 {
            return Err(Error::Config("spline needs at least 2 bins".into()));
        }
        if !(self.tail_bound > 0.0 && self.tail_bound.is_finite()) {
            return Err(Error::Config("tail_bound must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Coupling<T> {
    pass: Vec<usize>,
    transform: Vec<usize>,
    net: Mlp<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplineFlow<T> {
    dim: usize,
    cond_dim: usize,
    config: FlowConfig,
    layers: Vec<Coupling<T>>,
}

pub struct FlowCache<T> {
    /// Input of every coupling, plus the final base-space point.
    states: Vec<Matrix<T>>,
    nets: Vec<MlpCache<T>>,
    params: Vec<Matrix<T>>,
    cond: Matrix<T>,
}

fn split(dim: usize, t: usize) -> (Vec<usize>, Vec<usize>) {
    let order: Vec<usize> = if t % 2 == 0 {
        (0..dim).collect()
    } else {
        (0..dim).rev().collect()
    };
    let n_pass = dim / 2;
    (order[..n_pass].to_vec(), order[n_pass..].to_vec())
}

impl<T: Real> SplineFlow<T> {
    /// New flow initialized to the identity map.
    pub fn new<R: Rng + ?Sized>(dim: usize, cond_dim: usize, config: FlowConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if dim == 0 {
            return Err(Error::Config("flow dimension must be positive".into()));
        }
        let p = raw_param_count(config.bins);
        let mut layers = Vec::with_capacity(config.num_transforms);
        for t in 0..config.num_transforms {
            let (pass, transform) = split(dim, t);
            let mut widths = vec![pass.len() + cond_dim];
            widths.extend(std::iter::repeat_n(config.hidden_features, config.blocks));
            widths.push(transform.len() * p);
            let mut net = Mlp::new(&widths, Activation::Relu, rng)?.with_residual(true);
            net.zero_output_layer();
            let last = net.layers().len() - 1;
            let bias = net.layers_mut()[last].bias_mut();
            for m in 0..transform.len() {
                for b in &mut bias[m * p + 2 * config.bins..(m + 1) * p] {
                    *b = T::lit(identity_derivative_raw());
                }
            }
            layers.push(Coupling { pass, transform, net });
        }
        Ok(Self {
            dim,
            cond_dim,
            config,
            layers,
        })
    }

    /// Rebuild from stored conditioner networks.
    pub fn from_parts(dim: usize, cond_dim: usize, config: FlowConfig, nets: Vec<Mlp<T>>) -> Result<Self> {
        config.validate()?;
        if nets.len() != config.num_transforms {
            return Err(Error::Checkpoint(format!(
                "expected {} conditioners, found {}",
                config.num_transforms,
                nets.len()
            )));
        }
        let p = raw_param_count(config.bins);
        let layers = nets
            .into_iter()
            .enumerate()
            .map(|(t, net)| {
                let (pass, transform) = split(dim, t);
                if net.in_dim() != pass.len() + cond_dim || net.out_dim() != transform.len() * p {
                    return Err(Error::Checkpoint(format!("conditioner {t} has the wrong shape")));
                }
                Ok(Coupling { pass, transform, net })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dim,
            cond_dim,
            config,
            layers,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn conditioners(&self) -> impl Iterator<Item = &Mlp<T>> {
        self.layers.iter().map(|l| &l.net)
    }

    pub fn conditioners_mut(&mut self) -> impl Iterator<Item = &mut Mlp<T>> {
        self.layers.iter_mut().map(|l| &mut l.net)
    }

    fn check(&self, theta: &Matrix<T>, cond: &Matrix<T>) -> Result<()> {
        if theta.cols() != self.dim {
            return Err(Error::shape("flow input", self.dim, theta.cols()));
        }
        if cond.cols() != self.cond_dim {
            return Err(Error::shape("flow condition", self.cond_dim, cond.cols()));
        }
        if cond.rows() != theta.rows() {
            return Err(Error::shape("flow condition rows", theta.rows(), cond.rows()));
        }
        Ok(())
    }

    fn net_input(layer: &Coupling<T>, state: &Matrix<T>, cond: &Matrix<T>) -> Matrix<T> {
        let n = state.rows();
        let width = layer.pass.len() + cond.cols();
        let mut data = Vec::with_capacity(n * width);
        for r in 0..n {
            let row = state.row(r);
            data.extend(layer.pass.iter().map(|&i| row[i]));
            data.extend_from_slice(cond.row(r));
        }
        Matrix::from_vec(n, width, data).expect("consistent widths")
    }

    /// Data → base: returns `z` and the summed `log |det J|` per row.
    pub fn forward(&self, theta: &Matrix<T>, cond: &Matrix<T>) -> Result<(Matrix<T>, Vec<T>)> {
        self.check(theta, cond)?;
        let bins = self.config.bins;
        let bound = T::lit(self.config.tail_bound);
        let p = raw_param_count(bins);
        let mut state = theta.clone();
        let mut logdet = vec![T::zero(); theta.rows()];
        for layer in &self.layers {
            let params = layer.net.forward(&Self::net_input(layer, &state, cond))?;
            for r in 0..state.rows() {
                let prow = params.row(r);
                let srow = state.row_mut(r);
                for (m, &i) in layer.transform.iter().enumerate() {
                    let spline = RqSpline::from_raw(&prow[m * p..(m + 1) * p], bins, bound);
                    let (y, ld) = spline.forward(srow[i]);
                    srow[i] = y;
                    logdet[r] += ld;
                }
            }
        }
        Ok((state, logdet))
    }

    /// Base → data.
    pub fn inverse(&self, z: &Matrix<T>, cond: &Matrix<T>) -> Result<Matrix<T>> {
        self.check(z, cond)?;
        let bins = self.config.bins;
        let bound = T::lit(self.config.tail_bound);
        let p = raw_param_count(bins);
        let mut state = z.clone();
        for layer in self.layers.iter().rev() {
            let params = layer.net.forward(&Self::net_input(layer, &state, cond))?;
            for r in 0..state.rows() {
                let prow = params.row(r);
                let srow = state.row_mut(r);
                for (m, &i) in layer.transform.iter().enumerate() {
                    let spline = RqSpline::from_raw(&prow[m * p..(m + 1) * p], bins, bound);
                    srow[i] = spline.inverse(srow[i]).0;
                }
            }
        }
        Ok(state)
    }

    /// `log q(θ_c | cond)` per row.
    pub fn log_prob(&self, theta: &Matrix<T>, cond: &Matrix<T>) -> Result<Vec<T>> {
        if !theta.all_finite() {
            return Err(Error::Input("non-finite continuous parameter".into()));
        }
        let (z, logdet) = self.forward(theta, cond)?;
        Ok((0..z.rows()).map(|r| base_log_prob(z.row(r)) + logdet[r]).collect())
    }

    /// Log-probabilities plus everything [`Self::backward`] needs.
    pub fn forward_train(&self, theta: &Matrix<T>, cond: &Matrix<T>) -> Result<(Vec<T>, FlowCache<T>)> {
        self.check(theta, cond)?;
        let bins = self.config.bins;
        let bound = T::lit(self.config.tail_bound);
        let p = raw_param_count(bins);
        let mut states = Vec::with_capacity(self.layers.len() + 1);
        let mut nets = Vec::with_capacity(self.layers.len());
        let mut all_params = Vec::with_capacity(self.layers.len());
        let mut state = theta.clone();
        let mut logp = vec![T::zero(); theta.rows()];
        for layer in &self.layers {
            let (params, cache) = layer.net.forward_train(&Self::net_input(layer, &state, cond))?;
            states.push(state.clone());
            for r in 0..state.rows() {
                let prow = params.row(r);
                let srow = state.row_mut(r);
                for (m, &i) in layer.transform.iter().enumerate() {
                    let spline = RqSpline::from_raw(&prow[m * p..(m + 1) * p], bins, bound);
                    let (y, ld) = spline.forward(srow[i]);
                    srow[i] = y;
                    logp[r] += ld;
                }
            }
            nets.push(cache);
            all_params.push(params);
        }
        for (r, lp) in logp.iter_mut().enumerate() {
            *lp += base_log_prob(state.row(r));
        }
        states.push(state);
        Ok((
            logp,
            FlowCache {
                states,
                nets,
                params: all_params,
                cond: cond.clone(),
            },
        ))
    }

    /// Gradient of `Σ_r weights[r]·log q(θ_r | cond_r)`: parameter gradients
    /// (in [`Parameterized`] order) and `∂/∂cond`.
    pub fn backward(&self, cache: &FlowCache<T>, weights: &[T]) -> (Gradients<T>, Matrix<T>) {
        let bins = self.config.bins;
        let bound = T::lit(self.config.tail_bound);
        let p = raw_param_count(bins);
        let n = weights.len();
        let z = &cache.states[self.layers.len()];
        // ∂ log N(z) / ∂z = −z
        let mut g = Matrix::zeros(n, self.dim);
        for r in 0..n {
            for (gi, &zi) in g.row_mut(r).iter_mut().zip(z.row(r)) {
                *gi = -weights[r] * zi;
            }
        }
        let mut dcond = Matrix::zeros(n, self.cond_dim);
        let mut per_layer = Vec::with_capacity(self.layers.len());
        for (t, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.states[t];
            let params = &cache.params[t];
            let mut dparams = Matrix::zeros(n, params.cols());
            for r in 0..n {
                let prow = params.row(r);
                let drow = dparams.row_mut(r);
                for (m, &i) in layer.transform.iter().enumerate() {
                    let (_, _, dx) = forward_backward(
                        input.get(r, i),
                        &prow[m * p..(m + 1) * p],
                        bins,
                        bound,
                        g.get(r, i),
                        weights[r],
                        &mut drow[m * p..(m + 1) * p],
                    );
                    g.set(r, i, dx);
                }
            }
            let (dnet_in, grads) = layer.net.backward(&cache.nets[t], &dparams);
            let np = layer.pass.len();
            for r in 0..n {
                let drow = dnet_in.row(r);
                for (j, &i) in layer.pass.iter().enumerate() {
                    let v = g.get(r, i) + drow[j];
                    g.set(r, i, v);
                }
                for (dc, &v) in dcond.row_mut(r).iter_mut().zip(&drow[np..]) {
                    *dc += v;
                }
            }
            per_layer.push(grads);
        }
        debug_assert_eq!(cache.cond.rows(), n);
        per_layer.reverse();
        (per_layer.into_iter().flatten().collect(), dcond)
    }

    /// One draw per condition row.
    pub fn sample<R: Rng + ?Sized>(&self, cond: &Matrix<T>, rng: &mut R) -> Result<Matrix<T>> {
        let n = cond.rows();
        let data = (0..n * self.dim)
            .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let z = Matrix::from_vec(n, self.dim, data)?;
        self.inverse(&z, cond)
    }
}

/// Standard-normal log-density of one point.
pub fn base_log_prob<T: Real>(z: &[T]) -> T {
    let half = T::lit(0.5);
    z.iter().map(|&v| -half * v * v - T::lit(HALF_LN_2PI)).sum()
}

impl<T: Real> Parameterized<T> for SplineFlow<T> {
    fn parameters(&self) -> Vec<&[T]> {
        self.layers.iter().flat_map(|l| l.net.parameters()).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut [T]> {
        self.layers.iter_mut().flat_map(|l| l.net.parameters_mut()).collect()
    }
}
