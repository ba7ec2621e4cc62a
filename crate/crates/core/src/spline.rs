//! Monotone rational-quadratic splines on `[-B, B]` with identity tails.
//!
//! The closed-form direction (`Forward`) maps data towards the base
//! distribution and is the one differentiated during training; `Inverse`
//! solves the per-bin quadratic and is used for sampling.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::real::Real;

pub const MIN_BIN_WIDTH: f64 = 1e-3;
pub const MIN_BIN_HEIGHT: f64 = 1e-3;
pub const MIN_DERIVATIVE: f64 = 1e-3;
/// Normalized bins narrower than this are clamped.
pub const DEGENERATE_BIN: f64 = 1e-6;

static DEGENERATE_CLAMPS: AtomicUsize = AtomicUsize::new(0);

/// Number of degenerate-bin clamps since process start.
pub fn degenerate_clamp_count() -> usize {
    DEGENERATE_CLAMPS.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Unconstrained parameters per transformed coordinate: `K` width logits,
/// `K` height logits and `K − 1` interior derivative pre-activations.
pub fn raw_param_count(bins: usize) -> usize {
    3 * bins - 1
}

/// Raw derivative value that maps to a knot derivative of exactly one.
pub fn identity_derivative_raw() -> f64 {
    // softplus⁻¹(1 − min)
    (1.0 - MIN_DERIVATIVE).exp_m1().ln()
}

fn softplus<T: Real>(x: T) -> T {
    if x > T::lit(30.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn softmax<T: Real>(v: &[T]) -> Vec<T> {
    let m = v.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = v.iter().map(|&x| (x - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// A concrete spline: `K + 1` knots in each axis and `K + 1` knot derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct RqSpline<T> {
    bound: T,
    xs: Vec<T>,
    ys: Vec<T>,
    derivs: Vec<T>,
}

impl<T: Real> RqSpline<T> {
    /// Build from normalized bin fractions (positive, summing to one) and all
    /// `K + 1` knot derivatives.
    pub fn new(widths: &[T], heights: &[T], derivatives: &[T], bound: T) -> Result<Self> {
        let k = widths.len();
        if k == 0 || heights.len() != k || derivatives.len() != k + 1 {
            return Err(Error::Config(format!(
                "spline needs K widths, K heights and K+1 derivatives (got {}, {}, {})",
                widths.len(),
                heights.len(),
                derivatives.len()
            )));
        }
        if !(bound > T::zero()) {
            return Err(Error::Config("tail bound must be positive".into()));
        }
        if widths.iter().chain(heights).any(|&w| !(w > T::zero()))
            || derivatives.iter().any(|&d| !(d > T::zero()))
        {
            return Err(Error::Config("spline widths, heights and derivatives must be positive".into()));
        }
        let widths = clamp_bins(widths);
        let heights = clamp_bins(heights);
        Ok(Self {
            bound,
            xs: knots(&widths, bound),
            ys: knots(&heights, bound),
            derivs: derivatives.to_vec(),
        })
    }

    /// Build from `3K − 1` unconstrained values laid out as in
    /// [`raw_param_count`].
    pub fn from_raw(raw: &[T], bins: usize, bound: T) -> Self {
        debug_assert_eq!(raw.len(), raw_param_count(bins));
        let widths = constrain(&raw[..bins], T::lit(MIN_BIN_WIDTH));
        let heights = constrain(&raw[bins..2 * bins], T::lit(MIN_BIN_HEIGHT));
        let mut derivs = Vec::with_capacity(bins + 1);
        derivs.push(T::one());
        derivs.extend(raw[2 * bins..].iter().map(|&r| T::lit(MIN_DERIVATIVE) + softplus(r)));
        derivs.push(T::one());
        Self {
            bound,
            xs: knots(&widths, bound),
            ys: knots(&heights, bound),
            derivs,
        }
    }

    pub fn bins(&self) -> usize {
        self.xs.len() - 1
    }

    pub fn bound(&self) -> T {
        self.bound
    }

    fn inside(&self, v: T) -> bool {
        v >= -self.bound && v <= self.bound
    }

    /// Data → base map and `log |dy/dx|`.
    pub fn forward(&self, x: T) -> (T, T) {
        if !self.inside(x) {
            return (x, T::zero());
        }
        let k = bin_index(&self.xs, x);
        let b = self.bin(k);
        let xi = ((x - b.x0) / b.w).max(T::zero()).min(T::one());
        let s = b.h / b.w;
        let t = xi * (T::one() - xi);
        let p = s * xi * xi + b.d0 * t;
        let den = s + (b.d1 + b.d0 - T::lit(2.0) * s) * t;
        let y = b.y0 + b.h * p / den;
        let omx = T::one() - xi;
        let n2 = b.d1 * xi * xi + T::lit(2.0) * s * t + b.d0 * omx * omx;
        let logdet = T::lit(2.0) * s.ln() + n2.ln() - T::lit(2.0) * den.ln();
        (y, logdet)
    }

    /// Base → data map and `log |dx/dy|` (the negative of the forward value).
    pub fn inverse(&self, y: T) -> (T, T) {
        if !self.inside(y) {
            return (y, T::zero());
        }
        let k = bin_index(&self.ys, y);
        let b = self.bin(k);
        let s = b.h / b.w;
        let dy = y - b.y0;
        let sum = b.d1 + b.d0 - T::lit(2.0) * s;
        let a = b.h * (s - b.d0) + dy * sum;
        let bb = b.h * b.d0 - dy * sum;
        let c = -s * dy;
        let disc = (bb * bb - T::lit(4.0) * a * c).max(T::zero());
        let xi = (T::lit(2.0) * c / (-bb - disc.sqrt())).max(T::zero()).min(T::one());
        let x = xi * b.w + b.x0;
        let t = xi * (T::one() - xi);
        let den = s + sum * t;
        let omx = T::one() - xi;
        let n2 = b.d1 * xi * xi + T::lit(2.0) * s * t + b.d0 * omx * omx;
        let logdet = T::lit(2.0) * s.ln() + n2.ln() - T::lit(2.0) * den.ln();
        (x, -logdet)
    }

    fn bin(&self, k: usize) -> Bin<T> {
        Bin {
            x0: self.xs[k],
            w: self.xs[k + 1] - self.xs[k],
            y0: self.ys[k],
            h: self.ys[k + 1] - self.ys[k],
            d0: self.derivs[k],
            d1: self.derivs[k + 1],
        }
    }
}

/// Evaluate a spline in either direction.
pub fn rq_spline<T: Real>(value: T, spline: &RqSpline<T>, direction: Direction) -> (T, T) {
    match direction {
        Direction::Forward => spline.forward(value),
        Direction::Inverse => spline.inverse(value),
    }
}

struct Bin<T> {
    x0: T,
    w: T,
    y0: T,
    h: T,
    d0: T,
    d1: T,
}

fn constrain<T: Real>(logits: &[T], min: T) -> Vec<T> {
    let c = T::one() - min * T::from_usize(logits.len()).unwrap();
    softmax(logits).into_iter().map(|p| min + c * p).collect()
}

fn clamp_bins<T: Real>(fractions: &[T]) -> Vec<T> {
    let total: T = fractions.iter().copied().sum();
    let floor = T::lit(DEGENERATE_BIN);
    let mut clamped = false;
    let out: Vec<T> = fractions
        .iter()
        .map(|&f| {
            let f = f / total;
            if f < floor {
                clamped = true;
                floor
            } else {
                f
            }
        })
        .collect();
    if !clamped {
        return out;
    }
    DEGENERATE_CLAMPS.fetch_add(1, Ordering::Relaxed);
    let total: T = out.iter().copied().sum();
    out.into_iter().map(|f| f / total).collect()
}

fn knots<T: Real>(fractions: &[T], bound: T) -> Vec<T> {
    let two_b = bound + bound;
    let mut out = Vec::with_capacity(fractions.len() + 1);
    let mut acc = T::zero();
    out.push(-bound);
    for &f in &fractions[..fractions.len() - 1] {
        acc += f;
        out.push(-bound + two_b * acc);
    }
    out.push(bound);
    out
}

fn bin_index<T: Real>(knots: &[T], v: T) -> usize {
    // Largest k with knots[k] <= v, capped at the last bin.
    let k = knots.partition_point(|&e| e <= v);
    k.saturating_sub(1).min(knots.len() - 2)
}

/// Forward map plus the gradient of `gy·y + gl·log|dy/dx|` with respect to
/// `x` and to the raw parameters (accumulated into `draw`).
///
/// Returns `(y, logdet, ∂/∂x)`.
pub fn forward_backward<T: Real>(x: T, raw: &[T], bins: usize, bound: T, gy: T, gl: T, draw: &mut [T]) -> (T, T, T) {
    debug_assert_eq!(draw.len(), raw_param_count(bins));
    if !(x >= -bound && x <= bound) {
        return (x, T::zero(), gy);
    }
    let two = T::lit(2.0);
    let min_w = T::lit(MIN_BIN_WIDTH);
    let min_h = T::lit(MIN_BIN_HEIGHT);
    let pw = softmax(&raw[..bins]);
    let ph = softmax(&raw[bins..2 * bins]);
    let kf = T::from_usize(bins).unwrap();
    let cw = T::one() - min_w * kf;
    let ch = T::one() - min_h * kf;
    let wf: Vec<T> = pw.iter().map(|&p| min_w + cw * p).collect();
    let hf: Vec<T> = ph.iter().map(|&p| min_h + ch * p).collect();
    let xs = knots(&wf, bound);
    let ys = knots(&hf, bound);
    let k = bin_index(&xs, x);

    let x0 = xs[k];
    let w = xs[k + 1] - xs[k];
    let y0 = ys[k];
    let h = ys[k + 1] - ys[k];
    let d_raw = &raw[2 * bins..];
    let d0 = if k == 0 { T::one() } else { T::lit(MIN_DERIVATIVE) + softplus(d_raw[k - 1]) };
    let d1 = if k + 1 == bins { T::one() } else { T::lit(MIN_DERIVATIVE) + softplus(d_raw[k]) };

    let xi = (x - x0) / w;
    let s = h / w;
    let t = xi * (T::one() - xi);
    let omx = T::one() - xi;
    let one_m2xi = T::one() - two * xi;
    let sum = d1 + d0 - two * s;
    let p = s * xi * xi + d0 * t;
    let den = s + sum * t;
    let y = y0 + h * p / den;
    let n2 = d1 * xi * xi + two * s * t + d0 * omx * omx;
    let logdet = two * s.ln() + n2.ln() - two * den.ln();

    // partials of P, D, N2
    let p_xi = two * s * xi + d0 * one_m2xi;
    let p_s = xi * xi;
    let p_d0 = t;
    let den_xi = sum * one_m2xi;
    let den_s = T::one() - two * t;
    let den_d = t;
    let n2_xi = two * d1 * xi + two * s * one_m2xi - two * d0 * omx;
    let n2_s = two * t;
    let n2_d0 = omx * omx;
    let n2_d1 = xi * xi;

    let den2 = den * den;
    let y_xi = h * (p_xi * den - p * den_xi) / den2;
    let y_s = h * (p_s * den - p * den_s) / den2;
    let y_d0 = h * (p_d0 * den - p * den_d) / den2;
    let y_d1 = -h * p * den_d / den2;
    let y_h = p / den;

    let l_xi = n2_xi / n2 - two * den_xi / den;
    let l_s = two / s + n2_s / n2 - two * den_s / den;
    let l_d0 = n2_d0 / n2 - two * den_d / den;
    let l_d1 = n2_d1 / n2 - two * den_d / den;

    let g_xi = gy * y_xi + gl * l_xi;
    let g_s = gy * y_s + gl * l_s;
    let g_d0 = gy * y_d0 + gl * l_d0;
    let g_d1 = gy * y_d1 + gl * l_d1;

    let dx = g_xi / w;
    let g_x0 = -g_xi / w;
    let g_w = -(g_xi * xi + g_s * s) / w;
    let g_h = gy * y_h + g_s / w;
    let g_y0 = gy;

    // Knot positions: X_k = −B + 2B Σ_{j<k} f_j and W_k = 2B f_k.
    let two_b = bound + bound;
    let g_wf: Vec<T> = (0..bins)
        .map(|j| {
            if j < k {
                two_b * g_x0
            } else if j == k {
                two_b * g_w
            } else {
                T::zero()
            }
        })
        .collect();
    let g_hf: Vec<T> = (0..bins)
        .map(|j| {
            if j < k {
                two_b * g_y0
            } else if j == k {
                two_b * g_h
            } else {
                T::zero()
            }
        })
        .collect();
    softmax_backward(&pw, &g_wf, cw, &mut draw[..bins]);
    softmax_backward(&ph, &g_hf, ch, &mut draw[bins..2 * bins]);
    if k > 0 {
        draw[2 * bins + k - 1] += g_d0 * sigmoid(d_raw[k - 1]);
    }
    if k + 1 < bins {
        draw[2 * bins + k] += g_d1 * sigmoid(d_raw[k]);
    }
    (y, logdet, dx)
}

fn softmax_backward<T: Real>(p: &[T], g: &[T], scale: T, out: &mut [T]) {
    let dot: T = p.iter().zip(g).map(|(&a, &b)| a * b).sum();
    for ((o, &pi), &gi) in out.iter_mut().zip(p).zip(g) {
        *o += scale * pi * (gi - dot);
    }
}
