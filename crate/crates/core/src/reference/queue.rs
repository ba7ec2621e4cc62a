use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::posterior::{MixedSamples, PosteriorEstimator};
use crate::simulators::{
    expected_queue_length, TandemQueue, MIN_SERVERS, PRIOR_MEDIANS, PRIOR_SCALE, SERVER_CLASSES,
};

const CONFIGS: usize = SERVER_CLASSES * SERVER_CLASSES;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;
/// Particles whose weight is below `e^-PRUNE` of the largest are dropped
/// from the resampling pool but still counted in every sum.
const PRUNE: f64 = 40.0;

/// Importance-sampling reference for the tandem queue.
///
/// Every server configuration is handled separately. The arrival rate is
/// proposed from the normalized Poisson likelihood of the three counts
/// (a Gamma density) and both service rates from their prior; weights
/// carry the prior, the admissibility indicator and the remaining
/// likelihood terms. Configuration probabilities are proportional to the
/// per-configuration evidence estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueueReference {
    pub model: TandemQueue,
    /// Proposal draws per configuration in the first round.
    pub budget: usize,
    /// Configurations that fall short of `min_ess` are doubled up to this.
    pub max_budget: usize,
    pub min_ess: f64,
    /// Configurations below this posterior probability are not checked.
    pub min_config_prob: f64,
    /// Replace the likelihood by 1, which recovers the truncated prior.
    pub mask_likelihood: bool,
}

impl Default for QueueReference {
    fn default() -> Self {
        Self {
            model: TandemQueue::default(),
            budget: 20_000,
            max_budget: 1_280_000,
            min_ess: 500.0,
            min_config_prob: 0.01,
            mask_likelihood: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfigurationDiagnostics {
    pub servers: [usize; 2],
    pub draws: usize,
    pub log_evidence: f64,
    pub probability: f64,
    pub ess: f64,
}

#[derive(Debug, Clone, Copy)]
struct Particle {
    theta: [f64; 3],
    log_w: f64,
}

/// Running self-normalized weight sums for one configuration.
#[derive(Debug, Clone)]
struct ConfigState {
    servers: [usize; 2],
    draws: usize,
    max_log_w: f64,
    /// `Σ exp(log_w − max_log_w)` and the same for squared weights.
    sum: f64,
    sum_sq: f64,
    kept: Vec<Particle>,
}

impl ConfigState {
    fn new(index: usize) -> Self {
        Self {
            servers: [index / SERVER_CLASSES + MIN_SERVERS, index % SERVER_CLASSES + MIN_SERVERS],
            draws: 0,
            max_log_w: f64::NEG_INFINITY,
            sum: 0.0,
            sum_sq: 0.0,
            kept: Vec::new(),
        }
    }

    fn push(&mut self, p: Particle) {
        if p.log_w == f64::NEG_INFINITY {
            return;
        }
        if p.log_w > self.max_log_w {
            let r = (self.max_log_w - p.log_w).exp();
            self.sum *= r;
            self.sum_sq *= r * r;
            self.max_log_w = p.log_w;
        }
        let w = (p.log_w - self.max_log_w).exp();
        self.sum += w;
        self.sum_sq += w * w;
        if p.log_w > self.max_log_w - PRUNE {
            self.kept.push(p);
        }
    }

    fn prune(&mut self) {
        let floor = self.max_log_w - PRUNE;
        self.kept.retain(|p| p.log_w > floor);
    }

    fn log_evidence(&self) -> f64 {
        if self.sum == 0.0 {
            return f64::NEG_INFINITY;
        }
        self.max_log_w + self.sum.ln() - (self.draws as f64).ln()
    }

    fn ess(&self) -> f64 {
        if self.sum_sq == 0.0 {
            0.0
        } else {
            self.sum * self.sum / self.sum_sq
        }
    }
}

/// Observation-dependent constants of the weight function.
struct Target {
    model: TandemQueue,
    masked: bool,
    total: f64,
    log_count_factorials: f64,
    q: [f64; 2],
    /// Gamma proposal for the arrival rate.
    gamma: Gamma<f64>,
    shape: f64,
    rate: f64,
}

fn lognormal_log_pdf(v: f64, median: f64) -> f64 {
    let z = (v.ln() - median.ln()) / PRIOR_SCALE;
    -v.ln() - PRIOR_SCALE.ln() - HALF_LN_2PI - 0.5 * z * z
}

impl Target {
    fn new(model: TandemQueue, masked: bool, x: &[f64]) -> Result<Self> {
        if x.len() != 5 {
            return Err(Error::shape("queue observation", 5, x.len()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite queue observation".into()));
        }
        if let Some(c) = x[..3].iter().find(|c| !(**c >= 0.0) || c.fract() != 0.0) {
            return Err(Error::Input(format!("count {c} is not a non-negative integer")));
        }
        if x[3] < 0.0 || x[4] < 0.0 {
            return Err(Error::Input("queue lengths must be non-negative".into()));
        }
        let total = x[0] + x[1] + x[2];
        let shape = total + 1.0;
        let rate = 3.0 * model.horizon;
        Ok(Self {
            model,
            masked,
            total,
            log_count_factorials: x[..3].iter().map(|&c| ln_gamma(c + 1.0)).sum(),
            q: [x[3], x[4]],
            gamma: Gamma::new(shape, 1.0 / rate).map_err(|e| Error::Input(e.to_string()))?,
            shape,
            rate,
        })
    }

    fn draw(&self, servers: [usize; 2], rng: &mut ChaCha8Rng) -> Particle {
        let mut prior = |m: f64| (m.ln() + PRIOR_SCALE * rng.sample::<f64, _>(StandardNormal)).exp();
        let (mu1, mu2) = (prior(PRIOR_MEDIANS[1]), prior(PRIOR_MEDIANS[2]));
        let g = if self.masked {
            prior(PRIOR_MEDIANS[0])
        } else {
            rng.sample(self.gamma)
        };
        let theta = [g, mu1, mu2];
        Particle {
            theta,
            log_w: self.log_weight(servers, theta),
        }
    }

    fn log_weight(&self, servers: [usize; 2], [g, mu1, mu2]: [f64; 3]) -> f64 {
        let eq = [
            expected_queue_length(g, mu1, servers[0]),
            expected_queue_length(g, mu2, servers[1]),
        ];
        let [Ok(e1), Ok(e2)] = eq else {
            return f64::NEG_INFINITY;
        };
        let cap = self.model.max_expected_length;
        if e1 > cap || e2 > cap {
            return f64::NEG_INFINITY;
        }
        if self.masked {
            return 0.0;
        }
        let t = self.model.horizon;
        let poisson = self.total * (g * t).ln() - 3.0 * g * t - self.log_count_factorials;
        let proposal = self.shape * self.rate.ln() + (self.shape - 1.0) * g.ln() - self.rate * g - ln_gamma(self.shape);
        lognormal_log_pdf(g, PRIOR_MEDIANS[0]) + poisson - proposal
            + self.model.truncated_normal_log_pdf(self.q[0], e1)
            + self.model.truncated_normal_log_pdf(self.q[1], e2)
    }
}

/// Weighted particles for every configuration plus diagnostics.
#[derive(Debug, Clone)]
pub struct QueueIsPosterior {
    states: Vec<ConfigState>,
    probabilities: Vec<f64>,
    min_ess: f64,
    min_config_prob: f64,
}

impl QueueReference {
    /// Run the sampler for `x`; the result has not been validated yet.
    pub fn posterior(&self, x: &[f64], seed: u64) -> Result<QueueIsPosterior> {
        if self.budget == 0 || self.max_budget < self.budget {
            return Err(Error::Config(format!(
                "budget {} and max budget {} are inconsistent",
                self.budget, self.max_budget
            )));
        }
        let target = Target::new(self.model, self.mask_likelihood, x)?;
        let mut states: Vec<ConfigState> = (0..CONFIGS).map(ConfigState::new).collect();
        let mut wanted: Vec<usize> = vec![self.budget; CONFIGS];
        for round in 0u64.. {
            states.par_iter_mut().enumerate().for_each(|(i, st)| {
                if wanted[i] == 0 {
                    return;
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(round * CONFIGS as u64 + i as u64);
                for _ in 0..wanted[i] {
                    st.push(target.draw(st.servers, &mut rng));
                }
                st.draws += wanted[i];
                st.prune();
            });
            let probs = probabilities(&states);
            let mut more = false;
            for (i, st) in states.iter().enumerate() {
                let short = probs[i] >= self.min_config_prob && st.ess() < self.min_ess;
                wanted[i] = if short { st.draws.min(self.max_budget - st.draws) } else { 0 };
                more |= wanted[i] > 0;
            }
            if !more {
                break;
            }
        }
        Ok(QueueIsPosterior {
            probabilities: probabilities(&states),
            states,
            min_ess: self.min_ess,
            min_config_prob: self.min_config_prob,
        })
    }
}

fn probabilities(states: &[ConfigState]) -> Vec<f64> {
    let logz: Vec<f64> = states.iter().map(ConfigState::log_evidence).collect();
    let m = logz.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return vec![0.0; states.len()];
    }
    let w: Vec<f64> = logz.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter().map(|v| v / z).collect()
}

impl QueueIsPosterior {
    pub fn diagnostics(&self) -> Vec<ConfigurationDiagnostics> {
        self.states
            .iter()
            .zip(&self.probabilities)
            .map(|(s, &p)| ConfigurationDiagnostics {
                servers: s.servers,
                draws: s.draws,
                log_evidence: s.log_evidence(),
                probability: p,
                ess: s.ess(),
            })
            .collect()
    }

    /// Posterior probability of each configuration, `c₁`-major.
    pub fn configuration_probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// Most probable `(c₁, c₂)`.
    pub fn mode(&self) -> [usize; 2] {
        let best = (0..CONFIGS)
            .max_by(|&a, &b| self.probabilities[a].total_cmp(&self.probabilities[b]))
            .unwrap_or(0);
        self.states[best].servers
    }

    pub fn discrete_marginals(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; SERVER_CLASSES]; 2];
        for (i, p) in self.probabilities.iter().enumerate() {
            m[0][i / SERVER_CLASSES] += p;
            m[1][i % SERVER_CLASSES] += p;
        }
        m
    }

    /// Error unless every configuration with probability at least the
    /// threshold has the required effective sample size.
    pub fn validate(&self) -> Result<()> {
        if self.probabilities.iter().all(|&p| p == 0.0) {
            return Err(Error::ReferenceInvalid("no admissible proposal carried weight".into()));
        }
        for d in self.diagnostics() {
            if d.probability >= self.min_config_prob && d.ess < self.min_ess {
                return Err(Error::ReferenceInvalid(format!(
                    "configuration {:?} has probability {:.3} but ESS {:.1} < {} after {} draws",
                    d.servers, d.probability, d.ess, self.min_ess, d.draws
                )));
            }
        }
        Ok(())
    }

    /// Sampling-importance-resampling draws (with replacement).
    pub fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Result<MixedSamples> {
        let config_cdf = cumulative(self.probabilities.iter().copied());
        let particle_cdfs: Vec<Vec<f64>> = self
            .states
            .iter()
            .map(|s| cumulative(s.kept.iter().map(|p| (p.log_w - s.max_log_w).exp())))
            .collect();
        let mut theta_d = Vec::with_capacity(n);
        let mut theta_c = Vec::with_capacity(3 * n);
        for _ in 0..n {
            let c = pick(&config_cdf, rng);
            let st = &self.states[c];
            let p = st.kept[pick(&particle_cdfs[c], rng)];
            theta_d.push(vec![st.servers[0] - MIN_SERVERS, st.servers[1] - MIN_SERVERS]);
            theta_c.extend_from_slice(&p.theta);
        }
        MixedSamples::new(theta_d, Matrix::from_vec(n, 3, theta_c)?)
    }
}

fn cumulative(w: impl Iterator<Item = f64>) -> Vec<f64> {
    w.scan(0.0, |acc, v| {
        *acc += v;
        Some(*acc)
    })
    .collect()
}

fn pick(cdf: &[f64], rng: &mut dyn RngCore) -> usize {
    let total = cdf.last().copied().unwrap_or(0.0);
    let u = rng.random::<f64>() * total;
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

impl PosteriorEstimator for QueueReference {
    fn sample(&self, x: &[f64], n: usize, rng: &mut dyn RngCore) -> Result<MixedSamples> {
        let post = self.posterior(x, rng.next_u64())?;
        post.validate()?;
        post.sample(n, rng)
    }

    fn discrete_marginals(&self, x: &[f64], rng: &mut dyn RngCore) -> Result<Vec<Vec<f64>>> {
        let post = self.posterior(x, rng.next_u64())?;
        post.validate()?;
        Ok(post.discrete_marginals())
    }
}
