//! Calibration diagnostics for mixed posteriors.
//!
//! Continuous dimensions use simulation-based calibration: the rank of the
//! true value among posterior draws is uniform on `0..=S` for a calibrated
//! posterior. Its empirical CDF is summarized by the error over diagonal
//! (EoD) and compared against a Monte Carlo baseline for uniform ranks.
//! Discrete dimensions use top-label reliability binning and the expected
//! calibration error (ECE), with finite-sample baselines that assume a
//! perfectly calibrated classifier.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};
use crate::posterior::{MixedSamples, PosteriorEstimator};
use crate::simulators::Simulator;

/// Points on `[0, 1]` at which rank eCDFs are evaluated.
pub const ECDF_GRID_POINTS: usize = 101;
/// Largest bin occupancy for which the exact binomial baseline is summed.
pub const EXACT_BASELINE_CAP: usize = 100_000;

pub fn ecdf_grid() -> Vec<f64> {
    (0..ECDF_GRID_POINTS).map(|i| i as f64 / (ECDF_GRID_POINTS - 1) as f64).collect()
}

/// Number of draws strictly below the true value.
pub fn rank(samples: impl IntoIterator<Item = f64>, truth: f64) -> usize {
    samples.into_iter().filter(|&s| s < truth).count()
}

/// eCDF on [`ecdf_grid`] of ranks mapped to `(r + 1/2) / (S + 1)`, the
/// cell midpoints of `S + 1` equal cells. Both endpoints are exact.
pub fn rank_ecdf(ranks: &[usize], samples: usize) -> Vec<f64> {
    let cells = (samples + 1) as f64;
    let mut u: Vec<f64> = ranks.iter().map(|&r| (r as f64 + 0.5) / cells).collect();
    u.sort_by(f64::total_cmp);
    let n = u.len().max(1) as f64;
    ecdf_grid()
        .into_iter()
        .map(|t| u.partition_point(|&v| v <= t) as f64 / n)
        .collect()
}

/// Mean absolute deviation of an eCDF on [`ecdf_grid`] from the diagonal.
pub fn error_over_diagonal(ecdf: &[f64]) -> f64 {
    ecdf.iter().zip(ecdf_grid()).map(|(f, t)| (f - t).abs()).sum::<f64>() / ecdf.len() as f64
}

fn max_deviation(ecdf: &[f64]) -> f64 {
    ecdf.iter().zip(ecdf_grid()).map(|(f, t)| (f - t).abs()).fold(0.0, f64::max)
}

/// Kolmogorov–Smirnov test of ranks against the discrete uniform law on
/// `0..=S`. Returns the statistic and its asymptotic p-value, which is
/// conservative for discrete data.
pub fn ks_uniform(ranks: &[usize], samples: usize) -> (f64, f64) {
    let n = ranks.len();
    let mut counts = vec![0usize; samples + 1];
    for &r in ranks {
        counts[r.min(samples)] += 1;
    }
    let mut d: f64 = 0.0;
    let mut seen = 0usize;
    for (k, &c) in counts.iter().enumerate() {
        seen += c;
        let f = (k + 1) as f64 / (samples + 1) as f64;
        d = d.max((seen as f64 / n as f64 - f).abs());
    }
    let sqrt_n = (n as f64).sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    (d, kolmogorov_survival(lambda))
}

/// `P(K > λ)` for the Kolmogorov distribution.
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// EoD and eCDF band for uniform ranks at a given `(N_test, S)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EodBaseline {
    pub n_test: usize,
    pub samples: usize,
    pub n_mc: usize,
    pub mean: f64,
    /// 2.5 and 97.5 percentiles of EoD.
    pub lower: f64,
    pub upper: f64,
    /// 95% quantile of `sup_t |eCDF(t) − t|`; the simultaneous band is
    /// `t ± band_half_width`.
    pub band_half_width: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

pub fn eod_uniform_baseline(n_test: usize, samples: usize, n_mc: usize, seed: u64) -> Result<EodBaseline> {
    if n_mc < 1000 {
        return Err(Error::Config(format!("n_mc must be at least 1000, got {n_mc}")));
    }
    if n_test == 0 || samples == 0 {
        return Err(Error::Config("N_test and S must be positive".into()));
    }
    let stats: Vec<(f64, f64)> = (0..n_mc)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let ranks: Vec<usize> = (0..n_test).map(|_| rng.random_range(0..=samples)).collect();
            let ecdf = rank_ecdf(&ranks, samples);
            (error_over_diagonal(&ecdf), max_deviation(&ecdf))
        })
        .collect();
    let mut eod: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let mut sup: Vec<f64> = stats.iter().map(|s| s.1).collect();
    eod.sort_by(f64::total_cmp);
    sup.sort_by(f64::total_cmp);
    Ok(EodBaseline {
        n_test,
        samples,
        n_mc,
        mean: eod.iter().sum::<f64>() / n_mc as f64,
        lower: quantile(&eod, 0.025),
        upper: quantile(&eod, 0.975),
        band_half_width: quantile(&sup, 0.95),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SbcDimension {
    pub name: String,
    pub ranks: Vec<usize>,
    pub ecdf: Vec<f64>,
    pub eod: f64,
}

impl SbcDimension {
    /// `sup_t (eCDF(t) − t)`; positive values are eCDF mass above the diagonal.
    pub fn max_above_diagonal(&self) -> f64 {
        self.ecdf.iter().zip(ecdf_grid()).map(|(f, t)| f - t).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_below_diagonal(&self) -> f64 {
        self.ecdf.iter().zip(ecdf_grid()).map(|(f, t)| t - f).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn inside_band(&self, baseline: &EodBaseline) -> bool {
        max_deviation(&self.ecdf) <= baseline.band_half_width
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SbcReport {
    pub n_test: usize,
    pub samples: usize,
    pub grid: Vec<f64>,
    pub dims: Vec<SbcDimension>,
    pub baseline: EodBaseline,
}

impl SbcReport {
    pub fn all_inside_band(&self) -> bool {
        self.dims.iter().all(|d| d.inside_band(&self.baseline))
    }

    pub fn mean_eod(&self) -> f64 {
        self.dims.iter().map(|d| d.eod).sum::<f64>() / self.dims.len().max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Mean top-label confidence; zero for an empty bin.
    pub confidence: f64,
    pub accuracy: f64,
}

impl ReliabilityBin {
    pub fn center(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReliabilityReport {
    pub name: String,
    pub n: usize,
    pub bins: Vec<ReliabilityBin>,
    pub ece: f64,
    pub baseline_half_normal: f64,
    /// `None` when a bin exceeds [`EXACT_BASELINE_CAP`].
    pub baseline_exact: Option<f64>,
    /// Per-pair predicted class, its confidence and the true class.
    pub predicted: Vec<usize>,
    pub confidence: Vec<f64>,
    pub truth: Vec<usize>,
}

impl ReliabilityReport {
    /// `Σ_b (n_b/N)(conf(b) − acc(b))`; positive when confidence exceeds
    /// accuracy.
    pub fn signed_gap(&self) -> f64 {
        self.bins
            .iter()
            .map(|b| b.count as f64 / self.n as f64 * (b.confidence - b.accuracy))
            .sum()
    }

    pub fn within_baseline(&self, factor: f64) -> bool {
        self.ece <= factor * self.baseline_half_normal
    }
}

/// Reliability table and ECE from top-label predictions over `B`
/// equal-width bins.
pub fn reliability(
    name: &str,
    marginals: &[Vec<f64>],
    truth: &[usize],
    bins: usize,
) -> Result<ReliabilityReport> {
    if bins == 0 {
        return Err(Error::Config("number of bins must be positive".into()));
    }
    if marginals.len() != truth.len() || truth.is_empty() {
        return Err(Error::shape("reliability pairs", marginals.len(), truth.len()));
    }
    let n = truth.len();
    let mut table: Vec<ReliabilityBin> = (0..bins)
        .map(|b| ReliabilityBin {
            lower: b as f64 / bins as f64,
            upper: (b + 1) as f64 / bins as f64,
            count: 0,
            confidence: 0.0,
            accuracy: 0.0,
        })
        .collect();
    let mut predicted = Vec::with_capacity(n);
    let mut confidence = Vec::with_capacity(n);
    for (p, &t) in marginals.iter().zip(truth) {
        let (cls, conf) = p
            .iter()
            .copied()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .ok_or_else(|| Error::Input("empty class probability vector".into()))?;
        if !(0.0..=1.0 + 1e-9).contains(&conf) {
            return Err(Error::Input(format!("confidence {conf} outside [0, 1]")));
        }
        let conf = conf.min(1.0);
        let b = ((conf * bins as f64) as usize).min(bins - 1);
        table[b].count += 1;
        table[b].confidence += conf;
        table[b].accuracy += f64::from(u8::from(cls == t));
        predicted.push(cls);
        confidence.push(conf);
    }
    let mut ece = 0.0;
    for b in &mut table {
        if b.count > 0 {
            b.confidence /= b.count as f64;
            b.accuracy /= b.count as f64;
            ece += b.count as f64 / n as f64 * (b.accuracy - b.confidence).abs();
        }
    }
    let counts: Vec<usize> = table.iter().map(|b| b.count).collect();
    let centers: Vec<f64> = table.iter().map(ReliabilityBin::center).collect();
    Ok(ReliabilityReport {
        name: name.to_owned(),
        n,
        ece,
        baseline_half_normal: ece_baseline_half_normal(&counts, &centers, n)?,
        baseline_exact: match ece_baseline_exact(&counts, &centers, n) {
            Ok(v) => Some(v),
            Err(Error::Capability(_)) => None,
            Err(e) => return Err(e),
        },
        bins: table,
        predicted,
        confidence,
        truth: truth.to_vec(),
    })
}

fn check_bins(counts: &[usize], centers: &[f64], n: usize) -> Result<()> {
    if counts.len() != centers.len() {
        return Err(Error::shape("bin centers", counts.len(), centers.len()));
    }
    let total: usize = counts.iter().sum();
    if total != n {
        return Err(Error::Input(format!("bin counts sum to {total}, expected N = {n}")));
    }
    if let Some(p) = centers.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Input(format!("bin center {p} outside [0, 1]")));
    }
    Ok(())
}

/// Expected ECE of a perfectly calibrated classifier, approximating each
/// bin's binomial deviation by a half-normal.
pub fn ece_baseline_half_normal(counts: &[usize], centers: &[f64], n: usize) -> Result<f64> {
    check_bins(counts, centers, n)?;
    let s: f64 = counts
        .iter()
        .zip(centers)
        .map(|(&c, &p)| (c as f64 * p * (1.0 - p)).sqrt())
        .sum();
    Ok((2.0 / std::f64::consts::PI).sqrt() * s / n as f64)
}

/// `E|k/n − p|` for `k ~ Binomial(n, p)`, summed exactly.
pub fn binomial_mean_abs_deviation(n: usize, p: f64) -> f64 {
    if n == 0 || p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    (0..=n)
        .map(|k| {
            let logpmf = ln_binomial(n as u64, k as u64) + k as f64 * lp + (n - k) as f64 * lq;
            (k as f64 / n as f64 - p).abs() * logpmf.exp()
        })
        .sum()
}

/// Exact expected ECE of a perfectly calibrated classifier.
pub fn ece_baseline_exact(counts: &[usize], centers: &[f64], n: usize) -> Result<f64> {
    check_bins(counts, centers, n)?;
    if let Some(c) = counts.iter().find(|&&c| c > EXACT_BASELINE_CAP) {
        return Err(Error::Capability(format!(
            "bin occupancy {c} exceeds {EXACT_BASELINE_CAP}; use the half-normal baseline"
        )));
    }
    Ok(counts
        .iter()
        .zip(centers)
        .map(|(&c, &p)| c as f64 / n as f64 * binomial_mean_abs_deviation(c, p))
        .sum())
}

/// `min(n p, n (1 − p)) ≥ 5`, where the half-normal approximation is reliable.
pub fn half_normal_reliable(count: usize, center: f64) -> bool {
    let c = count as f64;
    (c * center).min(c * (1.0 - center)) >= 5.0 - 1e-9
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CalibrationConfig {
    pub n_test: usize,
    pub samples: usize,
    pub bins: usize,
    pub seed: u64,
    /// Monte Carlo replicates for the EoD baseline.
    pub baseline_mc: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            n_test: 500,
            samples: 1000,
            bins: 10,
            seed: 0,
            baseline_mc: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub config: CalibrationConfig,
    pub sbc: SbcReport,
    pub reliability: Vec<ReliabilityReport>,
}

impl CalibrationReport {
    /// Every eCDF inside its band and every ECE within `factor` times its
    /// half-normal baseline.
    pub fn passes(&self, ece_factor: f64) -> bool {
        self.sbc.all_inside_band() && self.reliability.iter().all(|r| r.within_baseline(ece_factor))
    }
}

struct PairOutcome {
    ranks: Vec<usize>,
    marginals: Vec<Vec<f64>>,
    truth: Vec<usize>,
}

fn evaluate_pair(
    estimator: &dyn PosteriorEstimator,
    model: &dyn Simulator,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<PairOutcome> {
    let space = model.space();
    let (theta, _) = model.sample_prior(rng);
    let x = model.simulate(&theta, rng)?;
    let draws: MixedSamples = estimator.sample(&x, samples, rng)?;
    if draws.theta_c.cols() != space.k() || draws.len() != samples {
        return Err(Error::shape("posterior draws", space.k(), draws.theta_c.cols()));
    }
    let ranks = (0..space.k())
        .map(|j| rank((0..samples).map(|s| draws.theta_c.get(s, j)), theta.theta_c[j]))
        .collect();
    let marginals = if space.l() > 0 {
        let m = estimator.discrete_marginals(&x, rng)?;
        let ok = m.len() == space.l() && m.iter().enumerate().all(|(i, p)| p.len() == space.discrete.classes(i));
        if !ok {
            return Err(Error::shape("discrete marginals", space.l(), m.len()));
        }
        m
    } else {
        Vec::new()
    };
    Ok(PairOutcome {
        ranks,
        marginals,
        truth: theta.theta_d,
    })
}

/// SBC over continuous dimensions plus reliability over discrete
/// dimensions from `N_test` fresh prior-predictive pairs. Pair `i` draws
/// everything from its own RNG stream, so the result does not depend on
/// thread scheduling.
pub fn calibration_report(
    estimator: &dyn PosteriorEstimator,
    model: &dyn Simulator,
    config: CalibrationConfig,
) -> Result<CalibrationReport> {
    if config.n_test == 0 || config.samples == 0 || config.bins == 0 {
        return Err(Error::Config("N_test, S and B must be positive".into()));
    }
    let outcomes: Vec<PairOutcome> = (0..config.n_test)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64);
            evaluate_pair(estimator, model, config.samples, &mut rng)
        })
        .collect::<Result<_>>()?;
    let space = model.space();
    let dims = space
        .continuous
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let ranks: Vec<usize> = outcomes.iter().map(|o| o.ranks[j]).collect();
            let ecdf = rank_ecdf(&ranks, config.samples);
            SbcDimension {
                name: name.clone(),
                eod: error_over_diagonal(&ecdf),
                ranks,
                ecdf,
            }
        })
        .collect();
    let reliability = space
        .discrete
        .dims()
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let m: Vec<Vec<f64>> = outcomes.iter().map(|o| o.marginals[i].clone()).collect();
            let t: Vec<usize> = outcomes.iter().map(|o| o.truth[i]).collect();
            reliability(&d.name, &m, &t, config.bins)
        })
        .collect::<Result<_>>()?;
    Ok(CalibrationReport {
        config,
        sbc: SbcReport {
            n_test: config.n_test,
            samples: config.samples,
            grid: ecdf_grid(),
            dims,
            baseline: eod_uniform_baseline(config.n_test, config.samples, config.baseline_mc, config.seed ^ 0xB45E)?,
        },
        reliability,
    })
}

/// Deliberately overconfident wrapper: continuous draws are contracted
/// toward their per-observation mean and discrete marginals are sharpened
/// by a temperature on the log-probabilities.
pub struct OverconfidentPosterior<P> {
    pub inner: P,
    /// Multiplies the spread of continuous draws.
    pub std_scale: f64,
    pub temperature: f64,
}

impl<P: PosteriorEstimator> OverconfidentPosterior<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            std_scale: 0.5,
            temperature: 0.2,
        }
    }
}

impl<P: PosteriorEstimator> PosteriorEstimator for OverconfidentPosterior<P> {
    fn sample(&self, x: &[f64], n: usize, rng: &mut dyn RngCore) -> Result<MixedSamples> {
        let mut s = self.inner.sample(x, n, rng)?;
        let k = s.theta_c.cols();
        for j in 0..k {
            let mean = (0..n).map(|i| s.theta_c.get(i, j)).sum::<f64>() / n.max(1) as f64;
            for i in 0..n {
                let v = s.theta_c.get(i, j);
                s.theta_c.set(i, j, mean + self.std_scale * (v - mean));
            }
        }
        Ok(s)
    }

    fn discrete_marginals(&self, x: &[f64], rng: &mut dyn RngCore) -> Result<Vec<Vec<f64>>> {
        let m = self.inner.discrete_marginals(x, rng)?;
        Ok(m
            .into_iter()
            .map(|p| {
                let w: Vec<f64> = p.iter().map(|v| v.powf(1.0 / self.temperature)).collect();
                let z: f64 = w.iter().sum();
                w.into_iter().map(|v| v / z).collect()
            })
            .collect())
    }
}

#[cfg(test)]
mod tests;
