//! The mixed posterior estimator `q(θ_d, θ_c | x) = q(θ_d | x) · q(θ_c | θ_d, x)`.
//!
//! Observations pass through fixed per-dimension transforms, z-scoring and an
//! optional embedding network; the result conditions both heads. Continuous
//! parameters are z-scored before the flow and densities are reported on the
//! original scale.

use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{FlowConfig, SplineFlow};
use crate::made::{CategoricalMade, DiscretePmf, DiscreteSchema, ENUMERATION_CAP};
use crate::nn::checkpoint::{decode_bits, encode_bits, Checkpoint};
use crate::nn::{
    train_split, Activation, Gradients, Linear, Matrix, Mlp, Normalizer, Objective, Parameterized, TrainConfig,
    TrainLog, DEFAULT_EPSILON,
};
use crate::posterior::{MixedSample, MixedSamples, PosteriorEstimator};
use crate::real::Real;
use crate::dataset::Dataset;

/// Draws used for discrete marginals when the space is too large to enumerate.
const MONTE_CARLO_MARGINAL_DRAWS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixedParamSpace {
    pub discrete: DiscreteSchema,
    /// Names of the continuous dimensions.
    pub continuous: Vec<String>,
}

impl MixedParamSpace {
    pub fn new(discrete: DiscreteSchema, continuous: Vec<String>) -> Result<Self> {
        if discrete.is_empty() && continuous.is_empty() {
            return Err(Error::Config("parameter space needs at least one dimension".into()));
        }
        Ok(Self { discrete, continuous })
    }

    /// Number of discrete dimensions `l`.
    pub fn l(&self) -> usize {
        self.discrete.len()
    }

    /// Number of continuous dimensions `k`.
    pub fn k(&self) -> usize {
        self.continuous.len()
    }

    pub fn check(&self, theta: &MixedSample) -> Result<()> {
        self.discrete.check(&theta.theta_d)?;
        if theta.theta_c.len() != self.k() {
            return Err(Error::shape("continuous parameter", self.k(), theta.theta_c.len()));
        }
        Ok(())
    }
}

/// Fixed elementwise preprocessing of one observation dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObsTransform {
    Identity,
    Sqrt,
    Log1p,
}

impl ObsTransform {
    pub fn apply(self, v: f64) -> Result<f64> {
        if !v.is_finite() {
            return Err(Error::Input(format!("non-finite observation {v}")));
        }
        match self {
            ObsTransform::Identity => Ok(v),
            ObsTransform::Sqrt if v >= 0.0 => Ok(v.sqrt()),
            ObsTransform::Log1p if v > -1.0 => Ok(v.ln_1p()),
            t => Err(Error::Input(format!("observation {v} outside the domain of {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub hidden: Vec<usize>,
    pub output: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub made_hidden: Vec<usize>,
    pub flow: FlowConfig,
    #[serde(default)]
    pub embedding: Option<EmbeddingConfig>,
}

impl ArchConfig {
    pub fn toy() -> Self {
        Self {
            made_hidden: vec![32; 3],
            flow: FlowConfig {
                num_transforms: 5,
                hidden_features: 32,
                blocks: 4,
                bins: 10,
                tail_bound: 5.0,
            },
            embedding: None,
        }
    }

    pub fn coal() -> Self {
        Self {
            made_hidden: vec![64],
            flow: FlowConfig {
                num_transforms: 2,
                hidden_features: 64,
                blocks: 1,
                bins: 10,
                tail_bound: 5.0,
            },
            embedding: Some(EmbeddingConfig {
                hidden: vec![64],
                output: 32,
            }),
        }
    }

    pub fn queue() -> Self {
        Self {
            made_hidden: vec![256; 4],
            flow: FlowConfig {
                num_transforms: 4,
                hidden_features: 256,
                blocks: 4,
                bins: 9,
                tail_bound: 5.0,
            },
            embedding: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.flow.validate()?;
        if let Some(e) = &self.embedding {
            if e.output == 0 || e.hidden.contains(&0) {
                return Err(Error::Config("embedding widths must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MnpeEstimator<T> {
    space: MixedParamSpace,
    arch: ArchConfig,
    obs_transforms: Vec<ObsTransform>,
    x_norm: Normalizer<T>,
    theta_norm: Normalizer<T>,
    embedding: Option<Mlp<T>>,
    made: Option<CategoricalMade<T>>,
    flow: Option<SplineFlow<T>>,
}

impl<T: Real> MnpeEstimator<T> {
    /// Untrained estimator with the given preprocessing.
    pub fn new<R: Rng + ?Sized>(
        space: MixedParamSpace,
        arch: ArchConfig,
        obs_transforms: Vec<ObsTransform>,
        x_norm: Normalizer<T>,
        theta_norm: Normalizer<T>,
        rng: &mut R,
    ) -> Result<Self> {
        arch.validate()?;
        let d = obs_transforms.len();
        if d == 0 {
            return Err(Error::Config("observation dimension must be positive".into()));
        }
        if x_norm.dim() != d {
            return Err(Error::shape("observation normalizer", d, x_norm.dim()));
        }
        if theta_norm.dim() != space.k() {
            return Err(Error::shape("parameter normalizer", space.k(), theta_norm.dim()));
        }
        let embedding = match &arch.embedding {
            Some(e) => {
                let mut widths = vec![d];
                widths.extend(&e.hidden);
                widths.push(e.output);
                Some(Mlp::new(&widths, Activation::Relu, rng)?)
            }
            None => None,
        };
        let ctx = embedding.as_ref().map_or(d, Mlp::out_dim);
        let made = if space.l() > 0 {
            Some(CategoricalMade::new(space.discrete.clone(), ctx, &arch.made_hidden, rng)?)
        } else {
            None
        };
        let flow = if space.k() > 0 {
            let cond = space.discrete.one_hot_width() + ctx;
            Some(SplineFlow::new(space.k(), cond, arch.flow.clone(), rng)?)
        } else {
            None
        };
        Ok(Self {
            space,
            arch,
            obs_transforms,
            x_norm,
            theta_norm,
            embedding,
            made,
            flow,
        })
    }

    /// Fit preprocessing on the training split, then train both heads
    /// jointly with early stopping on the validation split.
    pub fn fit(
        space: MixedParamSpace,
        dataset: &Dataset,
        arch: ArchConfig,
        obs_transforms: Vec<ObsTransform>,
        config: &TrainConfig,
    ) -> Result<(Self, TrainLog)> {
        dataset.check(&space.discrete, space.k())?;
        if dataset.obs_dim() != obs_transforms.len() {
            return Err(Error::shape("observation transforms", dataset.obs_dim(), obs_transforms.len()));
        }
        let (train_rows, val_rows) = config.split(dataset.len())?;
        let x = transform_obs(&obs_transforms, &dataset.x)?;
        let x = to_real::<T>(&x);
        let theta_c = to_real::<T>(&dataset.theta_c);
        let eps = T::lit(DEFAULT_EPSILON);
        let x_norm = Normalizer::fit(&x.select_rows(&train_rows), eps)?;
        let theta_norm = Normalizer::fit(&theta_c.select_rows(&train_rows), eps)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x1417));
        let mut model = Self::new(space, arch, obs_transforms, x_norm, theta_norm, &mut rng)?;
        let objective = JointObjective {
            theta_d: &dataset.theta_d,
            theta_c: model.theta_norm.transform(&theta_c)?,
            x: model.x_norm.transform(&x)?,
        };
        let log = train_split(&mut model, &objective, &train_rows, &val_rows, config)?;
        Ok((model, log))
    }

    pub fn space(&self) -> &MixedParamSpace {
        &self.space
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn obs_transforms(&self) -> &[ObsTransform] {
        &self.obs_transforms
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_transforms.len()
    }

    pub fn made(&self) -> Option<&CategoricalMade<T>> {
        self.made.as_ref()
    }

    pub fn flow(&self) -> Option<&SplineFlow<T>> {
        self.flow.as_ref()
    }

    pub fn theta_normalizer(&self) -> &Normalizer<T> {
        &self.theta_norm
    }

    /// Transformed and z-scored observation rows.
    pub fn prepare_obs(&self, x: &Matrix<f64>) -> Result<Matrix<T>> {
        if x.cols() != self.obs_dim() {
            return Err(Error::shape("observation", self.obs_dim(), x.cols()));
        }
        self.x_norm.transform(&to_real(&transform_obs(&self.obs_transforms, x)?))
    }

    fn context(&self, xn: &Matrix<T>) -> Result<Matrix<T>> {
        match &self.embedding {
            Some(e) => e.forward(xn),
            None => Ok(xn.clone()),
        }
    }

    fn context_for(&self, x: &[f64]) -> Result<Vec<T>> {
        Ok(self.context(&self.prepare_obs(&Matrix::row_vector(x))?)?.into_vec())
    }

    fn flow_condition(&self, theta_d: &[Vec<usize>], ctx: &Matrix<T>) -> Result<Matrix<T>> {
        let w = self.space.discrete.one_hot_width();
        let c = ctx.cols();
        let mut cond = Matrix::zeros(ctx.rows(), w + c);
        for r in 0..ctx.rows() {
            let row = cond.row_mut(r);
            self.space.discrete.encode(&theta_d[r], &mut row[..w])?;
            row[w..].copy_from_slice(ctx.row(r));
        }
        Ok(cond)
    }

    /// The training loss on raw rows, preprocessed with this estimator's
    /// observation transforms and normalizers.
    pub fn objective<'a>(
        &self,
        theta_d: &'a [Vec<usize>],
        theta_c: &Matrix<f64>,
        x: &Matrix<f64>,
    ) -> Result<JointObjective<'a, T>> {
        if theta_d.len() != x.rows() || theta_c.rows() != x.rows() {
            return Err(Error::shape("objective rows", x.rows(), theta_d.len().min(theta_c.rows())));
        }
        Ok(JointObjective {
            theta_d,
            theta_c: self.theta_norm.transform(&to_real(theta_c))?,
            x: self.prepare_obs(x)?,
        })
    }

    /// Per-row discrete and continuous NLLs in the training (z-scored)
    /// parameterization.
    pub fn head_nlls(&self, theta_d: &[Vec<usize>], theta_c: &Matrix<f64>, x: &Matrix<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        let ctx = self.context(&self.prepare_obs(x)?)?;
        self.head_nlls_prepared(theta_d, &self.theta_norm.transform(&to_real(theta_c))?, &ctx)
    }

    fn head_nlls_prepared(&self, theta_d: &[Vec<usize>], theta_cn: &Matrix<T>, ctx: &Matrix<T>) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = ctx.rows();
        let d = match &self.made {
            Some(m) => m.log_prob_batch(theta_d, ctx)?.into_iter().map(|v| -v.as_f64()).collect(),
            None => vec![0.0; n],
        };
        let c = match &self.flow {
            Some(f) => f
                .log_prob(theta_cn, &self.flow_condition(theta_d, ctx)?)?
                .into_iter()
                .map(|v| -v.as_f64())
                .collect(),
            None => vec![0.0; n],
        };
        Ok((d, c))
    }

    /// Mean over rows of the discrete plus continuous NLL.
    pub fn joint_loss(&self, theta_d: &[Vec<usize>], theta_c: &Matrix<f64>, x: &Matrix<f64>) -> Result<f64> {
        let (d, c) = self.head_nlls(theta_d, theta_c, x)?;
        let n = d.len() as f64;
        Ok(d.iter().zip(&c).map(|(a, b)| a + b).sum::<f64>() / n)
    }

    /// `log q(θ_d | x)`.
    pub fn discrete_log_prob(&self, theta_d: &[usize], x: &[f64]) -> Result<f64> {
        self.space.discrete.check(theta_d)?;
        match &self.made {
            Some(m) => Ok(m.log_prob(theta_d, &self.context_for(x)?)?.as_f64()),
            None => Ok(0.0),
        }
    }

    /// `log q(θ_c | θ_d, x)` on the original parameter scale.
    pub fn continuous_log_prob(&self, theta: &MixedSample, x: &[f64]) -> Result<f64> {
        self.space.check(theta)?;
        let Some(flow) = &self.flow else { return Ok(0.0) };
        let ctx = Matrix::row_vector(&self.context_for(x)?);
        let mut tc: Vec<T> = theta.theta_c.iter().map(|&v| T::lit(v)).collect();
        self.theta_norm.transform_row(&mut tc);
        let cond = self.flow_condition(std::slice::from_ref(&theta.theta_d), &ctx)?;
        let lp = flow.log_prob(&Matrix::row_vector(&tc), &cond)?[0];
        Ok((lp + self.theta_norm.log_abs_det()).as_f64())
    }

    /// `log q(θ_d, θ_c | x)` on the original parameter scale.
    pub fn joint_log_prob(&self, theta: &MixedSample, x: &[f64]) -> Result<f64> {
        Ok(self.discrete_log_prob(&theta.theta_d, x)? + self.continuous_log_prob(theta, x)?)
    }

    /// Joint log-density of many parameter vectors at one observation.
    pub fn log_prob_batch(&self, samples: &MixedSamples, x: &[f64]) -> Result<Vec<f64>> {
        let n = samples.len();
        for t in &samples.theta_d {
            self.space.discrete.check(t)?;
        }
        if samples.theta_c.cols() != self.space.k() {
            return Err(Error::shape("continuous parameter", self.space.k(), samples.theta_c.cols()));
        }
        let ctx = Matrix::repeat_row(&self.context_for(x)?, n);
        let tcn = self.theta_norm.transform(&to_real(&samples.theta_c))?;
        let (d, c) = self.head_nlls_prepared(&samples.theta_d, &tcn, &ctx)?;
        let jac = if self.flow.is_some() { self.theta_norm.log_abs_det().as_f64() } else { 0.0 };
        Ok(d.iter().zip(&c).map(|(a, b)| -a - b + jac).collect())
    }

    /// `n` joint draws: `θ_d` from the MADE, then `θ_c` from the flow.
    pub fn sample<R: Rng + ?Sized>(&self, x: &[f64], n: usize, rng: &mut R) -> Result<MixedSamples> {
        let ctx = Matrix::repeat_row(&self.context_for(x)?, n);
        let theta_d = match &self.made {
            Some(m) => m.sample_batch(&ctx, rng)?,
            None => vec![Vec::new(); n],
        };
        let theta_c = match &self.flow {
            Some(f) => {
                let z = f.sample(&self.flow_condition(&theta_d, &ctx)?, rng)?;
                to_f64(&self.theta_norm.inverse(&z)?)
            }
            None => Matrix::zeros(n, 0),
        };
        MixedSamples::new(theta_d, theta_c)
    }

    /// Exact PMF over the discrete space by enumeration.
    pub fn class_probabilities(&self, x: &[f64]) -> Result<DiscretePmf<f64>> {
        let Some(m) = &self.made else {
            return Err(Error::Capability("estimator has no discrete dimensions".into()));
        };
        let pmf = m.class_probabilities(&self.context_for(x)?)?;
        Ok(DiscretePmf {
            probs: pmf.probs.iter().map(|p| p.as_f64()).collect(),
            marginals: pmf
                .marginals
                .iter()
                .map(|m| m.iter().map(|p| p.as_f64()).collect())
                .collect(),
        })
    }

    pub fn discrete_marginals_with<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<Vec<Vec<f64>>> {
        if self.made.is_none() {
            return Ok(Vec::new());
        }
        match self.space.discrete.configurations() {
            Some(c) if c <= ENUMERATION_CAP => Ok(self.class_probabilities(x)?.marginals),
            _ => Ok(self
                .sample(x, MONTE_CARLO_MARGINAL_DRAWS, rng)?
                .discrete_frequencies(&self.space.discrete)),
        }
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let masks: Vec<String> = self
            .made
            .iter()
            .flat_map(|m| m.network().layers())
            .map(|l| encode_bits(l.mask().unwrap_or(&[])))
            .collect();
        let header = serde_json::json!({
            "format": "mnpe-estimator",
            "scalar": std::any::type_name::<T>(),
            "space": self.space,
            "arch": self.arch,
            "obs_transforms": self.obs_transforms,
            "normalizer_epsilon": [self.x_norm.epsilon().as_f64(), self.theta_norm.epsilon().as_f64()],
            "made_masks": masks,
        });
        let f = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<f64>>();
        let mut arrays = vec![
            f(self.x_norm.mean()),
            f(self.x_norm.std()),
            f(self.theta_norm.mean()),
            f(self.theta_norm.std()),
        ];
        arrays.extend(self.parameters().into_iter().map(f));
        Ok(Checkpoint { header, arrays })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let h = &ckpt.header;
        if h["format"] != "mnpe-estimator" {
            return Err(Error::Checkpoint("not an estimator checkpoint".into()));
        }
        let field = |name: &str| {
            h.get(name)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("header is missing '{name}'")))
        };
        let space: MixedParamSpace = serde_json::from_value(field("space")?)?;
        let arch: ArchConfig = serde_json::from_value(field("arch")?)?;
        let obs_transforms: Vec<ObsTransform> = serde_json::from_value(field("obs_transforms")?)?;
        let eps: [f64; 2] = serde_json::from_value(field("normalizer_epsilon")?)?;
        let masks: Vec<String> = serde_json::from_value(field("made_masks")?)?;
        if ckpt.arrays.len() < 4 {
            return Err(Error::Checkpoint("missing normalizer arrays".into()));
        }
        let t = |v: &[f64]| v.iter().map(|&x| T::lit(x)).collect::<Vec<T>>();
        let a = &ckpt.arrays;
        let x_norm = Normalizer::from_parts(t(&a[0]), t(&a[1]), T::lit(eps[0]))
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let theta_norm = Normalizer::from_parts(t(&a[2]), t(&a[3]), T::lit(eps[1]))
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = Self::new(space, arch, obs_transforms, x_norm, theta_norm, &mut rng)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if let Some(m) = &model.made {
            let layers: &[Linear<T>] = m.network().layers();
            if masks.len() != layers.len() {
                return Err(Error::Checkpoint("MADE mask count mismatch".into()));
            }
            for (l, hex) in layers.iter().zip(&masks) {
                let stored = decode_bits(hex, l.in_dim() * l.out_dim())?;
                if Some(stored.as_slice()) != l.mask() {
                    return Err(Error::Checkpoint("MADE masks do not match the schema".into()));
                }
            }
        }
        let params = model.parameters_mut();
        if params.len() != a.len() - 4 {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter arrays, found {}",
                params.len(),
                a.len() - 4
            )));
        }
        for (dst, src) in params.into_iter().zip(&a[4..]) {
            if dst.len() != src.len() {
                return Err(Error::Checkpoint("parameter array length mismatch".into()));
            }
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = T::lit(s);
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

impl<T: Real> Parameterized<T> for MnpeEstimator<T> {
    fn parameters(&self) -> Vec<&[T]> {
        let mut p: Vec<&[T]> = Vec::new();
        if let Some(e) = &self.embedding {
            p.extend(e.parameters());
        }
        if let Some(m) = &self.made {
            p.extend(m.parameters());
        }
        if let Some(f) = &self.flow {
            p.extend(f.parameters());
        }
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut [T]> {
        let mut p: Vec<&mut [T]> = Vec::new();
        if let Some(e) = &mut self.embedding {
            p.extend(e.parameters_mut());
        }
        if let Some(m) = &mut self.made {
            p.extend(m.parameters_mut());
        }
        if let Some(f) = &mut self.flow {
            p.extend(f.parameters_mut());
        }
        p
    }
}

impl<T: Real> PosteriorEstimator for MnpeEstimator<T> {
    fn sample(&self, x: &[f64], n: usize, rng: &mut dyn RngCore) -> Result<MixedSamples> {
        MnpeEstimator::sample(self, x, n, rng)
    }

    fn discrete_marginals(&self, x: &[f64], rng: &mut dyn RngCore) -> Result<Vec<Vec<f64>>> {
        self.discrete_marginals_with(x, rng)
    }
}

/// Training loss over preprocessed rows: discrete NLL plus continuous NLL
/// in z-scored parameter units.
pub struct JointObjective<'a, T> {
    theta_d: &'a [Vec<usize>],
    theta_c: Matrix<T>,
    x: Matrix<T>,
}

impl<T: Real> JointObjective<'_, T> {
    fn rows_d(&self, rows: &[usize]) -> Vec<Vec<usize>> {
        rows.iter().map(|&r| self.theta_d[r].clone()).collect()
    }
}

fn check_rows<T: Real>(values: &[T], rows: &[usize]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Training {
            epoch: 0,
            batch: 0,
            message: format!("non-finite loss at sample {}", rows[i]),
        }),
        None => Ok(()),
    }
}

impl<T: Real> Objective<T> for JointObjective<'_, T> {
    type Model = MnpeEstimator<T>;

    fn loss(&self, model: &MnpeEstimator<T>, rows: &[usize]) -> Result<T> {
        let ctx = model.context(&self.x.select_rows(rows))?;
        let td = self.rows_d(rows);
        let (d, c) = model.head_nlls_prepared(&td, &self.theta_c.select_rows(rows), &ctx)?;
        let per_row: Vec<T> = d.iter().zip(&c).map(|(a, b)| T::lit(a + b)).collect();
        check_rows(&per_row, rows)?;
        Ok(per_row.iter().copied().sum::<T>() / T::from_usize(rows.len()).unwrap())
    }

    fn loss_and_grad(&self, model: &MnpeEstimator<T>, rows: &[usize]) -> Result<(T, Gradients<T>)> {
        let n = rows.len();
        let nf = T::from_usize(n).unwrap();
        let xn = self.x.select_rows(rows);
        let td = self.rows_d(rows);
        let (ctx, emb_cache) = match &model.embedding {
            Some(e) => {
                let (c, cache) = e.forward_train(&xn)?;
                (c, Some(cache))
            }
            None => (xn, None),
        };
        let mut per_row = vec![T::zero(); n];
        let mut dctx = Matrix::zeros(n, ctx.cols());
        let mut made_grads = Vec::new();
        let mut flow_grads = Vec::new();
        if let Some(m) = &model.made {
            let inputs = m.inputs(&td, &ctx)?;
            let (nll, cache) = m.forward_train(&inputs, &td)?;
            per_row.iter_mut().zip(&nll).for_each(|(p, &v)| *p += v);
            let (g, dinput) = m.backward_mean_nll(&cache);
            let w = model.space.discrete.one_hot_width();
            for r in 0..n {
                for (d, &v) in dctx.row_mut(r).iter_mut().zip(&dinput.row(r)[w..]) {
                    *d += v;
                }
            }
            made_grads = g;
        }
        if let Some(f) = &model.flow {
            let cond = model.flow_condition(&td, &ctx)?;
            let (lp, cache) = f.forward_train(&self.theta_c.select_rows(rows), &cond)?;
            per_row.iter_mut().zip(&lp).for_each(|(p, &v)| *p -= v);
            let (g, dcond) = f.backward(&cache, &vec![-T::one() / nf; n]);
            let w = model.space.discrete.one_hot_width();
            for r in 0..n {
                for (d, &v) in dctx.row_mut(r).iter_mut().zip(&dcond.row(r)[w..]) {
                    *d += v;
                }
            }
            flow_grads = g;
        }
        check_rows(&per_row, rows)?;
        let mut grads = Vec::new();
        if let (Some(e), Some(cache)) = (&model.embedding, &emb_cache) {
            let (_, g) = e.backward(cache, &dctx);
            grads.extend(g);
        }
        grads.extend(made_grads);
        grads.extend(flow_grads);
        Ok((per_row.iter().copied().sum::<T>() / nf, grads))
    }
}

fn transform_obs(transforms: &[ObsTransform], x: &Matrix<f64>) -> Result<Matrix<f64>> {
    if x.cols() != transforms.len() {
        return Err(Error::shape("observation", transforms.len(), x.cols()));
    }
    let mut out = x.clone();
    for r in 0..out.rows() {
        for (v, t) in out.row_mut(r).iter_mut().zip(transforms) {
            *v = t.apply(*v)?;
        }
    }
    Ok(out)
}

fn to_real<T: Real>(m: &Matrix<f64>) -> Matrix<T> {
    Matrix::from_vec(m.rows(), m.cols(), m.as_slice().iter().map(|&v| T::lit(v)).collect()).expect("same shape")
}

fn to_f64<T: Real>(m: &Matrix<T>) -> Matrix<f64> {
    Matrix::from_vec(m.rows(), m.cols(), m.as_slice().iter().map(|v| v.as_f64()).collect()).expect("same shape")
}
