use super::*;
use crate::reference::{CoalReference, PriorPosterior, ToyPosterior};
use crate::simulators::{CoalChangepoint, GaussianToy};
use proptest::prelude::*;

#[test]
fn ranks_count_strictly_smaller_draws() {
    assert_eq!(rank([0.1, 0.5, 0.5, 0.9], 0.5), 1);
    assert_eq!(rank([1.0, 2.0], 0.0), 0);
    assert_eq!(rank([1.0, 2.0], 3.0), 2);
}

proptest! {
    #[test]
    fn ecdf_is_a_cdf(ranks in proptest::collection::vec(0usize..=50, 1..200)) {
        let e = rank_ecdf(&ranks, 50);
        prop_assert_eq!(e.len(), ECDF_GRID_POINTS);
        prop_assert_eq!(e[0], 0.0);
        prop_assert_eq!(e[ECDF_GRID_POINTS - 1], 1.0);
        prop_assert!(e.windows(2).all(|w| w[0] <= w[1]));
        let eod = error_over_diagonal(&e);
        prop_assert!((0.0..=0.5).contains(&eod));
    }

    #[test]
    fn ece_lies_in_unit_interval(
        pairs in proptest::collection::vec((0.0f64..1.0, 0usize..3), 1..100),
    ) {
        let marginals: Vec<Vec<f64>> = pairs
            .iter()
            .map(|(a, _)| vec![*a / 2.0, *a / 2.0, 1.0 - a])
            .collect();
        let truth: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let r = reliability("d", &marginals, &truth, 10).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.ece));
        prop_assert_eq!(r.bins.iter().map(|b| b.count).sum::<usize>(), truth.len());
        for b in r.bins.iter().filter(|b| b.count > 0) {
            prop_assert!(b.lower - 1e-12 <= b.confidence && b.confidence <= b.upper + 1e-12);
            prop_assert!((0.0..=1.0).contains(&b.accuracy));
        }
    }
}

#[test]
fn uniform_baseline_fixture_and_asymptotics() {
    let b = eod_uniform_baseline(500, 1000, 2000, 1).unwrap();
    // E|F_N(t) − t| ≈ √(2 t(1−t) / (π N)); averaging over t gives √(2/(πN))·π/8.
    let approx = (2.0 / (std::f64::consts::PI * 500.0)).sqrt() * std::f64::consts::PI / 8.0;
    assert!((b.mean - approx).abs() / approx < 0.05, "{} vs {approx}", b.mean);
    assert!(b.lower < b.mean && b.mean < b.upper);
    // Pinned with seed 1.
    assert!((b.mean - 0.013_823_257_4).abs() < 1e-9, "{}", b.mean);
    assert_eq!(b, eod_uniform_baseline(500, 1000, 2000, 1).unwrap());
}

#[test]
fn baseline_shrinks_with_n() {
    let small = eod_uniform_baseline(100, 1000, 1000, 2).unwrap();
    let mid = eod_uniform_baseline(500, 1000, 1000, 2).unwrap();
    assert!(small.mean > mid.mean && small.band_half_width > mid.band_half_width);
    let large = eod_uniform_baseline(100_000, 1000, 1000, 2).unwrap();
    assert!(large.mean < 0.005, "{}", large.mean);
    assert!(eod_uniform_baseline(10, 10, 999, 0).is_err());
}

#[test]
fn prior_as_posterior_gives_uniform_ranks() {
    let toy = GaussianToy::default();
    let report = calibration_report(
        &PriorPosterior { simulator: &toy },
        &toy,
        CalibrationConfig {
            seed: 3,
            ..CalibrationConfig::default()
        },
    )
    .unwrap();
    let (_, p) = ks_uniform(&report.sbc.dims[0].ranks, 1000);
    assert!(p > 0.01, "KS p = {p}");
}

/// All mass below every truth.
struct PointBelow;

impl PosteriorEstimator for PointBelow {
    fn sample(&self, _x: &[f64], n: usize, _rng: &mut dyn rand::RngCore) -> Result<MixedSamples> {
        MixedSamples::new(vec![vec![0]; n], crate::nn::Matrix::from_vec(n, 1, vec![-1e9; n])?)
    }

    fn discrete_marginals(&self, _x: &[f64], _rng: &mut dyn rand::RngCore) -> Result<Vec<Vec<f64>>> {
        Ok(vec![vec![1.0, 0.0]])
    }
}

#[test]
fn point_mass_below_truth_is_maximally_miscalibrated() {
    let toy = GaussianToy::default();
    let config = CalibrationConfig {
        n_test: 200,
        samples: 100,
        baseline_mc: 1000,
        ..CalibrationConfig::default()
    };
    let report = calibration_report(&PointBelow, &toy, config).unwrap();
    let dim = &report.sbc.dims[0];
    assert!(dim.ranks.iter().all(|&r| r == 100));
    // eCDF is 0 until the last grid point: mean of t over 100 of 101 points.
    assert!((dim.eod - 49.5 / 101.0).abs() < 1e-12, "{}", dim.eod);
    assert!(!report.sbc.all_inside_band());
    // Always class 0 with confidence 1 against a fair coin.
    let rel = &report.reliability[0];
    assert_eq!(rel.bins[9].count, 200);
    assert!((rel.ece - (1.0 - rel.bins[9].accuracy)).abs() < 1e-12);
    assert!((rel.ece - 0.5).abs() < 0.1);
}

#[test]
fn constant_class_at_full_confidence() {
    let m = vec![vec![1.0, 0.0]; 4];
    let r = reliability("d", &m, &[0, 1, 0, 1], 10).unwrap();
    assert_eq!(r.ece, 0.5);
    let r = reliability("d", &m, &[0, 0, 0, 0], 10).unwrap();
    assert_eq!(r.ece, 0.0);
    assert_eq!(r.bins[9].count, 4);
}

#[test]
fn half_normal_baseline_values() {
    let v = ece_baseline_half_normal(&[100], &[0.5], 100).unwrap();
    assert!((v - (2.0 / std::f64::consts::PI).sqrt() * 0.05).abs() < 1e-15);
    assert!((v - 0.039_894_228).abs() < 1e-9);
    assert_eq!(ece_baseline_half_normal(&[50], &[1.0], 50).unwrap(), 0.0);
    assert!(ece_baseline_half_normal(&[10, 10], &[0.5, 0.6], 30).is_err());
}

#[test]
fn uniform_occupancy_overstates_the_baseline() {
    let centers: Vec<f64> = (0..10).map(|b| (b as f64 + 0.5) / 10.0).collect();
    let uniform = [0, 0, 0, 0, 0, 100, 100, 100, 100, 100];
    let confident = [0, 0, 0, 0, 0, 10, 10, 20, 60, 400];
    let u = ece_baseline_half_normal(&uniform, &centers, 500).unwrap();
    let c = ece_baseline_half_normal(&confident, &centers, 500).unwrap();
    assert!(u > c, "{u} vs {c}");
}

/// de Moivre: E|K − np| = 2 ν C(n, ν) p^ν q^(n−ν+1), ν = ⌊np⌋ + 1.
fn de_moivre(n: u64, p: f64) -> f64 {
    let nu = (n as f64 * p).floor() as u64 + 1;
    let log = std::f64::consts::LN_2 + (nu as f64).ln() + ln_binomial(n, nu)
        + nu as f64 * p.ln()
        + (n - nu + 1) as f64 * (1.0 - p).ln();
    log.exp() / n as f64
}

#[test]
fn exact_baseline_matches_closed_form() {
    for (n, p) in [(1, 0.5), (7, 0.3), (40, 0.85), (1000, 0.55), (3, 0.95)] {
        let a = binomial_mean_abs_deviation(n, p);
        let b = de_moivre(n as u64, p);
        assert!((a - b).abs() < 1e-12 * b.max(1.0), "n={n} p={p}: {a} vs {b}");
    }
    assert!((binomial_mean_abs_deviation(1, 0.5) - 0.5).abs() < 1e-15);
    assert_eq!(binomial_mean_abs_deviation(30, 0.0), 0.0);
    assert_eq!(binomial_mean_abs_deviation(30, 1.0), 0.0);
    let hn = ece_baseline_half_normal(&[1], &[0.5], 1).unwrap();
    assert!((hn - 0.398_942_280_4).abs() < 1e-9);
}

#[test]
fn exact_and_half_normal_baselines_converge() {
    // A single draw: exact 2p(1−p) exceeds √(2/π)·√(p(1−p)) iff p(1−p) ≥ 2/(4π).
    for p in [0.5, 0.6, 0.7, 0.75] {
        let e = ece_baseline_exact(&[1], &[p], 1).unwrap();
        let h = ece_baseline_half_normal(&[1], &[p], 1).unwrap();
        assert!(e > h && (e - 2.0 * p * (1.0 - p)).abs() < 1e-15);
    }
    let e = ece_baseline_exact(&[1], &[0.95], 1).unwrap();
    assert!(e < ece_baseline_half_normal(&[1], &[0.95], 1).unwrap());
    // Whole rule-of-thumb region on a grid.
    for n in 10..=300 {
        for i in 1..100 {
            let p = i as f64 / 100.0;
            if half_normal_reliable(n, p) {
                let e = binomial_mean_abs_deviation(n, p);
                let h = ece_baseline_half_normal(&[n], &[p], n).unwrap();
                assert!((e - h).abs() / e < 0.05, "n={n} p={p}: {e} vs {h}");
            }
        }
    }
    for (n, p) in [(100, 0.5), (20, 0.75), (50, 0.9), (200, 0.95)] {
        assert!(half_normal_reliable(n, p));
        let e = ece_baseline_exact(&[n], &[p], n).unwrap();
        let h = ece_baseline_half_normal(&[n], &[p], n).unwrap();
        assert!((e - h).abs() / e < 0.05, "n={n} p={p}: {e} vs {h}");
    }
    assert!(!half_normal_reliable(40, 0.9));
    assert!(matches!(
        ece_baseline_exact(&[EXACT_BASELINE_CAP + 1], &[0.5], EXACT_BASELINE_CAP + 1),
        Err(Error::Capability(_))
    ));
}

#[test]
fn exact_toy_posterior_is_calibrated() {
    let toy = GaussianToy::default();
    let report = calibration_report(
        &ToyPosterior::new(toy),
        &toy,
        CalibrationConfig {
            seed: 9,
            ..CalibrationConfig::default()
        },
    )
    .unwrap();
    assert!(report.sbc.all_inside_band());
    assert!(report.sbc.dims[0].eod <= report.sbc.baseline.upper);
    assert!(report.passes(2.0), "{}", report.reliability[0].ece);
    let json = serde_json::to_value(&report).unwrap();
    assert_eq!(json["sbc"]["dims"][0]["ranks"].as_array().unwrap().len(), 500);
}

#[test]
fn exact_coal_posterior_is_calibrated() {
    let coal = CoalChangepoint;
    let report = calibration_report(
        &CoalReference,
        &coal,
        CalibrationConfig {
            n_test: 300,
            samples: 500,
            seed: 2,
            ..CalibrationConfig::default()
        },
    )
    .unwrap();
    for d in &report.sbc.dims {
        let (_, p) = ks_uniform(&d.ranks, 500);
        assert!(p > 0.01, "{}: KS p = {p}", d.name);
    }
    assert!(report.passes(2.0));
}

#[test]
fn overconfidence_shows_in_both_diagnostics() {
    let toy = GaussianToy::default();
    let sharp = OverconfidentPosterior::new(ToyPosterior::new(toy));
    let report = calibration_report(
        &sharp,
        &toy,
        CalibrationConfig {
            seed: 9,
            ..CalibrationConfig::default()
        },
    )
    .unwrap();
    let dim = &report.sbc.dims[0];
    assert!(dim.max_above_diagonal() > report.sbc.baseline.band_half_width);
    let rel = &report.reliability[0];
    assert!(rel.signed_gap() > 0.0);
    assert!(!rel.within_baseline(2.0));
}

#[test]
fn report_is_independent_of_scheduling() {
    let toy = GaussianToy::default();
    let config = CalibrationConfig {
        n_test: 64,
        samples: 50,
        baseline_mc: 1000,
        seed: 5,
        ..CalibrationConfig::default()
    };
    let a = calibration_report(&ToyPosterior::new(toy), &toy, config).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = pool.install(|| calibration_report(&ToyPosterior::new(toy), &toy, config).unwrap());
    assert_eq!(a, b);
}
