//! Conditional categorical MADE for the discrete posterior factor.
//!
//! The network maps `[one-hot(θ_d) ∥ context]` to one logit block per
//! discrete dimension. Degree-based weight masks guarantee that block `i`
//! only sees the one-hot inputs of dimensions `< i` (plus the context), so
//! a single forward pass yields every autoregressive conditional.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Gradients, Linear, Matrix, Mlp, MlpCache, Parameterized};
use crate::real::Real;

/// Largest discrete space that [`CategoricalMade::class_probabilities`]
/// enumerates.
pub const ENUMERATION_CAP: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscreteDim {
    pub name: String,
    pub classes: usize,
}

/// Ordered discrete dimensions; the order is the autoregressive order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<DiscreteDim>", into = "Vec<DiscreteDim>")]
pub struct DiscreteSchema {
    dims: Vec<DiscreteDim>,
    offsets: Vec<usize>,
}

impl TryFrom<Vec<DiscreteDim>> for DiscreteSchema {
    type Error = Error;

    fn try_from(dims: Vec<DiscreteDim>) -> Result<Self> {
        Self::new(dims)
    }
}

impl From<DiscreteSchema> for Vec<DiscreteDim> {
    fn from(s: DiscreteSchema) -> Self {
        s.dims
    }
}

impl DiscreteSchema {
    pub fn new(dims: Vec<DiscreteDim>) -> Result<Self> {
        if let Some(d) = dims.iter().find(|d| d.classes < 2) {
            return Err(Error::Config(format!(
                "discrete dimension '{}' needs at least 2 classes, has {}",
                d.name, d.classes
            )));
        }
        let mut offsets = Vec::with_capacity(dims.len());
        let mut acc = 0;
        for d in &dims {
            offsets.push(acc);
            acc += d.classes;
        }
        Ok(Self { dims, offsets })
    }

    /// Unnamed dimensions `d0, d1, ...` with the given class counts.
    pub fn from_classes(classes: &[usize]) -> Result<Self> {
        Self::new(
            classes
                .iter()
                .enumerate()
                .map(|(i, &c)| DiscreteDim {
                    name: format!("d{i}"),
                    classes: c,
                })
                .collect(),
        )
    }

    pub fn dims(&self) -> &[DiscreteDim] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn classes(&self, i: usize) -> usize {
        self.dims[i].classes
    }

    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    /// Σ |D_i|.
    pub fn one_hot_width(&self) -> usize {
        self.dims.iter().map(|d| d.classes).sum()
    }

    /// |D|, or `None` on overflow.
    pub fn configurations(&self) -> Option<usize> {
        self.dims.iter().try_fold(1usize, |acc, d| acc.checked_mul(d.classes))
    }

    pub fn check(&self, theta_d: &[usize]) -> Result<()> {
        if theta_d.len() != self.len() {
            return Err(Error::shape("discrete parameter", self.len(), theta_d.len()));
        }
        for (i, (&v, d)) in theta_d.iter().zip(&self.dims).enumerate() {
            if v >= d.classes {
                return Err(Error::Input(format!(
                    "class index {v} out of range for dimension {i} ('{}', {} classes)",
                    d.name, d.classes
                )));
            }
        }
        Ok(())
    }

    /// Write the one-hot code of `theta_d` into `out` (length Σ|D_i|).
    pub fn encode<T: Real>(&self, theta_d: &[usize], out: &mut [T]) -> Result<()> {
        self.check(theta_d)?;
        out.iter_mut().for_each(|v| *v = T::zero());
        for (i, &v) in theta_d.iter().enumerate() {
            out[self.offsets[i] + v] = T::one();
        }
        Ok(())
    }

    /// Configuration with lexicographic index `index` (last dimension fastest).
    pub fn decode_index(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.len()];
        for i in (0..self.len()).rev() {
            out[i] = index % self.dims[i].classes;
            index /= self.dims[i].classes;
        }
        out
    }
}

/// Degree masks for every layer of a MADE over `schema` with `context_dim`
/// always-visible inputs and the given hidden widths.
///
/// One-hot inputs of dimension `i` (1-based) carry degree `i`, context inputs
/// degree 0, hidden units cycle through degrees `0..l`, and output block `i`
/// connects only to hidden units of degree `< i`.
pub fn build_masks(schema: &DiscreteSchema, context_dim: usize, hidden: &[usize]) -> Result<Vec<Vec<bool>>> {
    let l = schema.len();
    if l == 0 {
        return Err(Error::Config("MADE needs at least one discrete dimension".into()));
    }
    if let Some(&w) = hidden.iter().find(|&&w| w < l) {
        return Err(Error::Config(format!(
            "hidden width {w} is smaller than the number of discrete dimensions {l}"
        )));
    }
    let mut input_deg = Vec::with_capacity(schema.one_hot_width() + context_dim);
    for (i, d) in schema.dims().iter().enumerate() {
        input_deg.extend(std::iter::repeat_n(i + 1, d.classes));
    }
    input_deg.extend(std::iter::repeat_n(0, context_dim));
    let output_deg: Vec<usize> = schema
        .dims()
        .iter()
        .enumerate()
        .flat_map(|(i, d)| std::iter::repeat_n(i + 1, d.classes))
        .collect();

    let mut masks = Vec::with_capacity(hidden.len() + 1);
    let mut prev = input_deg;
    for &w in hidden {
        let deg: Vec<usize> = (0..w).map(|j| j % l).collect();
        let mut m = Vec::with_capacity(w * prev.len());
        for &dh in &deg {
            m.extend(prev.iter().map(|&dp| dp <= dh));
        }
        masks.push(m);
        prev = deg;
    }
    let mut m = Vec::with_capacity(output_deg.len() * prev.len());
    for &dout in &output_deg {
        m.extend(prev.iter().map(|&dp| dp < dout));
    }
    masks.push(m);
    Ok(masks)
}

/// Exact PMF over all discrete configurations (lexicographic order) with
/// per-dimension marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePmf<T> {
    pub probs: Vec<T>,
    pub marginals: Vec<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalMade<T> {
    schema: DiscreteSchema,
    context_dim: usize,
    hidden: Vec<usize>,
    net: Mlp<T>,
}

impl<T: Real> CategoricalMade<T> {
    pub fn new<R: Rng + ?Sized>(
        schema: DiscreteSchema,
        context_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let masks = build_masks(&schema, context_dim, hidden)?;
        let mut widths = vec![schema.one_hot_width() + context_dim];
        widths.extend_from_slice(hidden);
        widths.push(schema.one_hot_width());
        let layers = widths
            .windows(2)
            .zip(masks)
            .map(|(w, m)| Linear::new(w[0], w[1], rng).with_mask(m))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            schema,
            context_dim,
            hidden: hidden.to_vec(),
            net: Mlp::from_layers(layers, Activation::Relu, false)?,
        })
    }

    /// Rebuild from stored layers; masks are recomputed from the schema and
    /// must match the stored ones exactly.
    pub fn from_parts(
        schema: DiscreteSchema,
        context_dim: usize,
        hidden: Vec<usize>,
        net: Mlp<T>,
    ) -> Result<Self> {
        let masks = build_masks(&schema, context_dim, &hidden)?;
        if net.layers().len() != masks.len()
            || net
                .layers()
                .iter()
                .zip(&masks)
                .any(|(l, m)| l.mask() != Some(m.as_slice()))
        {
            return Err(Error::Checkpoint("MADE masks do not match the schema".into()));
        }
        Ok(Self {
            schema,
            context_dim,
            hidden,
            net,
        })
    }

    pub fn schema(&self) -> &DiscreteSchema {
        &self.schema
    }

    pub fn context_dim(&self) -> usize {
        self.context_dim
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn network(&self) -> &Mlp<T> {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Mlp<T> {
        &mut self.net
    }

    pub fn input_dim(&self) -> usize {
        self.schema.one_hot_width() + self.context_dim
    }

    /// Build network inputs `[one-hot ∥ context]` for a batch.
    pub fn inputs(&self, theta_d: &[Vec<usize>], context: &Matrix<T>) -> Result<Matrix<T>> {
        if context.cols() != self.context_dim {
            return Err(Error::shape("MADE context", self.context_dim, context.cols()));
        }
        if context.rows() != theta_d.len() {
            return Err(Error::shape("MADE batch", theta_d.len(), context.rows()));
        }
        let w = self.schema.one_hot_width();
        let mut x = Matrix::zeros(theta_d.len(), self.input_dim());
        for (i, t) in theta_d.iter().enumerate() {
            let row = x.row_mut(i);
            self.schema.encode(t, &mut row[..w])?;
            row[w..].copy_from_slice(context.row(i));
        }
        Ok(x)
    }

    /// Raw logits for inputs built by [`Self::inputs`].
    pub fn logits(&self, inputs: &Matrix<T>) -> Result<Matrix<T>> {
        self.net.forward(inputs)
    }

    /// `log q(θ_d | context)` for one configuration.
    pub fn log_prob(&self, theta_d: &[usize], context: &[T]) -> Result<T> {
        let ctx = Matrix::row_vector(context);
        Ok(self.log_prob_batch(&[theta_d.to_vec()], &ctx)?[0])
    }

    pub fn log_prob_batch(&self, theta_d: &[Vec<usize>], context: &Matrix<T>) -> Result<Vec<T>> {
        let x = self.inputs(theta_d, context)?;
        let logits = self.net.forward(&x)?;
        Ok((0..theta_d.len())
            .map(|r| self.row_log_prob(logits.row(r), &theta_d[r]))
            .collect())
    }

    fn row_log_prob(&self, logits: &[T], theta_d: &[usize]) -> T {
        let mut lp = T::zero();
        for (i, &v) in theta_d.iter().enumerate() {
            let block = &logits[self.schema.offset(i)..self.schema.offset(i) + self.schema.classes(i)];
            lp += block[v] - log_sum_exp(block);
        }
        lp
    }

    /// Forward pass for training: per-row NLL plus the cache for
    /// [`Self::backward_mean_nll`].
    pub fn forward_train(&self, inputs: &Matrix<T>, theta_d: &[Vec<usize>]) -> Result<(Vec<T>, MadeCache<T>)> {
        let (logits, cache) = self.net.forward_train(inputs)?;
        let nll = (0..theta_d.len())
            .map(|r| -self.row_log_prob(logits.row(r), &theta_d[r]))
            .collect();
        Ok((
            nll,
            MadeCache {
                logits,
                net: cache,
                targets: theta_d.to_vec(),
            },
        ))
    }

    /// Gradient of the mean NLL over the cached batch: parameter gradients
    /// and `∂/∂inputs`.
    pub fn backward_mean_nll(&self, cache: &MadeCache<T>) -> (Gradients<T>, Matrix<T>) {
        let n = cache.targets.len();
        let scale = T::one() / T::from_usize(n).unwrap();
        let mut dlogits = Matrix::zeros(n, self.schema.one_hot_width());
        for r in 0..n {
            let logits = cache.logits.row(r);
            let d = dlogits.row_mut(r);
            for (i, &v) in cache.targets[r].iter().enumerate() {
                let (o, c) = (self.schema.offset(i), self.schema.classes(i));
                let block = &logits[o..o + c];
                let lse = log_sum_exp(block);
                for j in 0..c {
                    d[o + j] = (block[j] - lse).exp() * scale;
                }
                d[o + v] -= scale;
            }
        }
        let (dx, grads) = self.net.backward(&cache.net, &dlogits);
        (grads, dx)
    }

    /// Draw `n` configurations; `context` is a single row. Uses exactly
    /// `l` forward passes over the batch.
    pub fn sample<R: Rng + ?Sized>(&self, context: &[T], n: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
        self.sample_batch(&Matrix::repeat_row(context, n), rng)
    }

    /// One draw per context row.
    pub fn sample_batch<R: Rng + ?Sized>(&self, context: &Matrix<T>, rng: &mut R) -> Result<Vec<Vec<usize>>> {
        if context.cols() != self.context_dim {
            return Err(Error::shape("MADE context", self.context_dim, context.cols()));
        }
        let n = context.rows();
        let w = self.schema.one_hot_width();
        let mut x = Matrix::zeros(n, self.input_dim());
        for r in 0..n {
            x.row_mut(r)[w..].copy_from_slice(context.row(r));
        }
        let mut out = vec![vec![0usize; self.schema.len()]; n];
        for i in 0..self.schema.len() {
            let logits = self.net.forward(&x)?;
            let (o, c) = (self.schema.offset(i), self.schema.classes(i));
            for r in 0..n {
                let block = &logits.row(r)[o..o + c];
                let k = sample_softmax(block, rng);
                out[r][i] = k;
                x.row_mut(r)[o + k] = T::one();
            }
        }
        Ok(out)
    }

    /// Exact PMF over the whole discrete space by enumeration.
    pub fn class_probabilities(&self, context: &[T]) -> Result<DiscretePmf<T>> {
        self.class_probabilities_capped(context, ENUMERATION_CAP)
    }

    pub fn class_probabilities_capped(&self, context: &[T], cap: usize) -> Result<DiscretePmf<T>> {
        if context.len() != self.context_dim {
            return Err(Error::shape("MADE context", self.context_dim, context.len()));
        }
        let total = self
            .schema
            .configurations()
            .filter(|&t| t <= cap)
            .ok_or_else(|| {
                Error::Capability(format!(
                    "discrete space exceeds the enumeration cap of {cap}; use Monte Carlo marginals from samples"
                ))
            })?;
        let mut log_probs = Vec::with_capacity(total);
        const CHUNK: usize = 2048;
        let mut start = 0;
        while start < total {
            let end = (start + CHUNK).min(total);
            let configs: Vec<Vec<usize>> = (start..end).map(|i| self.schema.decode_index(i)).collect();
            let ctx = Matrix::repeat_row(context, configs.len());
            log_probs.extend(self.log_prob_batch(&configs, &ctx)?);
            start = end;
        }
        let probs: Vec<T> = log_probs.iter().map(|lp| lp.exp()).collect();
        let mut marginals: Vec<Vec<T>> = self.schema.dims().iter().map(|d| vec![T::zero(); d.classes]).collect();
        for (idx, &p) in probs.iter().enumerate() {
            for (i, v) in self.schema.decode_index(idx).into_iter().enumerate() {
                marginals[i][v] += p;
            }
        }
        Ok(DiscretePmf { probs, marginals })
    }
}

impl<T: Real> Parameterized<T> for CategoricalMade<T> {
    fn parameters(&self) -> Vec<&[T]> {
        self.net.parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut [T]> {
        self.net.parameters_mut()
    }
}

pub struct MadeCache<T> {
    logits: Matrix<T>,
    net: MlpCache<T>,
    targets: Vec<Vec<usize>>,
}

pub(crate) fn log_sum_exp<T: Real>(v: &[T]) -> T {
    let m = v.iter().copied().fold(T::neg_infinity(), T::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|&x| (x - m).exp()).sum::<T>().ln()
}

/// Inverse-CDF draw over class order with one uniform.
pub(crate) fn sample_softmax<T: Real, R: Rng + ?Sized>(logits: &[T], rng: &mut R) -> usize {
    let lse = log_sum_exp(logits);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &l) in logits.iter().enumerate() {
        acc += (l - lse).exp().as_f64();
        if u < acc {
            return k;
        }
    }
    logits.len() - 1
}
