use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use mnpe::calibration::{calibration_report, half_normal_reliable, CalibrationConfig, CalibrationReport};
use mnpe::dataset::Dataset;
use mnpe::metrics::{compare_posteriors, predictive_mse, PosteriorComparison, PredictiveMse};
use mnpe::posterior::PosteriorEstimator;
use mnpe::simulators::{self, simulate_dataset, Simulator};
use mnpe::{reference, Error, Estimator};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cli::{
    BenchmarkArgs, CalibrateArgs, EvaluateArgs, LogprobArgs, SampleArgs, SimulateArgs, TrainArgs,
};
use crate::config::{EvaluationConfig, RunConfig};
use crate::io::{self, label_offset, model_for_space, output_dir, parse_obs, parse_theta, write_json};

const DATA_FILE: &str = "data.csv";
const CHECKPOINT_FILE: &str = "model.ckpt";

fn input_error(msg: impl Into<String>) -> anyhow::Error {
    Error::Input(msg.into()).into()
}

fn load_estimator(path: &Path) -> Result<Estimator> {
    Estimator::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn checkpoint_path(flag: Option<&PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    flag.or(cfg.paths.checkpoint.as_ref())
        .cloned()
        .ok_or_else(|| input_error("no checkpoint given (use --ckpt)"))
}

/// Reject a checkpoint trained for a different parameter space or
/// observation layout than `sim`.
fn check_compatible(est: &Estimator, sim: &dyn Simulator) -> Result<()> {
    if est.space() != &sim.space() || est.obs_transforms() != sim.obs_transforms().as_slice() {
        return Err(input_error(format!(
            "checkpoint/model mismatch: the checkpoint was not trained for '{}'",
            sim.name()
        )));
    }
    Ok(())
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(args.config.as_deref())?;
    if let Some(m) = args.model {
        cfg.model = Some(m);
    }
    if let Some(n) = args.n {
        cfg.simulation.n = n;
    }
    if let Some(s) = args.seed {
        cfg.simulation.seed = s;
    }
    let sim = simulators::by_name(cfg.model_name()?)?;
    if cfg.simulation.n == 0 {
        return Err(input_error("--n must be positive"));
    }
    let dir = output_dir(args.out.as_deref().or(cfg.paths.out.as_deref()), "simulate")?;
    let data = simulate_dataset(sim.as_ref(), cfg.simulation.n, cfg.simulation.seed)?;
    let path = dir.join(DATA_FILE);
    data.save(&path)?;
    cfg.paths.data = Some(path.clone());
    cfg.paths.out = Some(dir.clone());
    cfg.write_resolved(&dir)?;
    println!(
        "wrote {} rows to {} ({} rejected, fraction {:.4})",
        data.len(),
        path.display(),
        data.meta.n_rejected,
        data.meta.rejection_fraction()
    );
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(args.config.as_deref())?;
    if let Some(d) = args.data {
        cfg.paths.data = Some(d);
    }
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    let data_path = cfg
        .paths
        .data
        .clone()
        .ok_or_else(|| input_error("no dataset given (use --data)"))?;
    let data = Dataset::load(&data_path).with_context(|| format!("loading dataset {}", data_path.display()))?;
    match &cfg.model {
        Some(m) if *m != data.meta.simulator => {
            return Err(input_error(format!(
                "schema mismatch: config model '{m}' but dataset was simulated by '{}'",
                data.meta.simulator
            )))
        }
        _ => cfg.model = Some(data.meta.simulator.clone()),
    }
    let sim = simulators::by_name(cfg.model_name()?)?;
    let arch = cfg.arch.clone().unwrap_or_else(|| sim.default_arch());
    cfg.arch = Some(arch.clone());
    let dir = output_dir(args.out.as_deref().or(cfg.paths.out.as_deref()), "train")?;
    let start = Instant::now();
    let (est, log) = Estimator::fit(sim.space(), &data, arch, sim.obs_transforms(), &cfg.train)?;
    let ckpt = dir.join(CHECKPOINT_FILE);
    est.save(&ckpt)?;
    std::fs::write(dir.join("train_log.csv"), log.to_csv())?;
    cfg.paths.checkpoint = Some(ckpt.clone());
    cfg.paths.out = Some(dir.clone());
    cfg.write_resolved(&dir)?;
    println!(
        "trained {} epochs (best {} at validation loss {:.5}) in {:.1}s; checkpoint {}",
        log.epochs.len(),
        log.best_epoch,
        log.best_validation_loss,
        start.elapsed().as_secs_f64(),
        ckpt.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct ClassProbability<'a> {
    dimension: &'a str,
    label: usize,
    probability: f64,
}

pub fn sample(args: SampleArgs) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(args.config.as_deref())?;
    let ckpt = checkpoint_path(args.ckpt.as_ref(), &cfg)?;
    let est = load_estimator(&ckpt)?;
    let model = model_for_space(est.space());
    if let Some(n) = args.n {
        cfg.sampling.n = n;
    }
    if let Some(s) = args.seed {
        cfg.sampling.seed = s;
    }
    if let Some(o) = &args.obs {
        cfg.sampling.obs = Some(parse_obs(o, model)?);
    }
    let x = cfg
        .sampling
        .obs
        .clone()
        .ok_or_else(|| input_error("no observation given (use --obs)"))?;
    let offset = label_offset(model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sampling.seed);
    let samples = est.sample(&x, cfg.sampling.n, &mut rng)?;
    let marginals = est.discrete_marginals_with(&x, &mut rng)?;
    let dir = output_dir(args.out.as_deref().or(cfg.paths.out.as_deref()), "sample")?;
    io::write_samples(&dir.join("samples.csv"), est.space(), &samples, offset)?;
    let mut w = csv::Writer::from_path(dir.join("marginals.csv"))?;
    for (dim, probs) in est.space().discrete.dims().iter().zip(&marginals) {
        for (c, &p) in probs.iter().enumerate() {
            w.serialize(ClassProbability {
                dimension: &dim.name,
                label: c + offset,
                probability: p,
            })?;
        }
    }
    w.flush()?;
    cfg.model = model.map(str::to_owned).or(cfg.model);
    cfg.arch = Some(est.arch().clone());
    cfg.paths.checkpoint = Some(ckpt);
    cfg.paths.out = Some(dir.clone());
    cfg.write_resolved(&dir)?;
    println!("wrote {} samples to {}", samples.len(), dir.join("samples.csv").display());
    Ok(())
}

pub fn logprob(args: LogprobArgs) -> Result<()> {
    let est = load_estimator(&args.ckpt)?;
    let model = model_for_space(est.space());
    let theta = parse_theta(&args.theta, est.space(), label_offset(model))?;
    let x = parse_obs(&args.obs, model)?;
    println!("{}", est.joint_log_prob(&theta, &x)?);
    Ok(())
}

#[derive(Serialize)]
struct FlaggedBin<'a> {
    dimension: &'a str,
    bin: usize,
    count: usize,
    center: f64,
}

#[derive(Serialize)]
struct CalibrationSummary<'a> {
    model: &'a str,
    posterior: &'a str,
    passes: bool,
    all_inside_band: bool,
    mean_eod: f64,
    /// ECE at most twice its half-normal baseline in every discrete dimension.
    ece_within_baseline: bool,
    /// Bins where the half-normal baseline is unreliable (`min(n p, n(1-p)) < 5`).
    unreliable_bins: Vec<FlaggedBin<'a>>,
}

#[derive(Serialize)]
struct CalibrationOutput<'a> {
    summary: CalibrationSummary<'a>,
    report: &'a CalibrationReport,
}

/// ECE factor applied to the half-normal baseline when judging calibration.
const ECE_FACTOR: f64 = 2.0;

fn write_calibration(dir: &Path, model: &str, posterior: &str, report: &CalibrationReport) -> Result<bool> {
    let mut unreliable = Vec::new();
    let mut rel = csv::Writer::from_path(dir.join("reliability.csv"))?;
    rel.write_record([
        "dimension",
        "bin",
        "lower",
        "upper",
        "center",
        "count",
        "confidence",
        "accuracy",
        "half_normal_reliable",
    ])?;
    for r in &report.reliability {
        for (b, bin) in r.bins.iter().enumerate() {
            let ok = half_normal_reliable(bin.count, bin.center());
            if !ok {
                unreliable.push(FlaggedBin {
                    dimension: &r.name,
                    bin: b,
                    count: bin.count,
                    center: bin.center(),
                });
            }
            rel.write_record([
                r.name.clone(),
                b.to_string(),
                bin.lower.to_string(),
                bin.upper.to_string(),
                bin.center().to_string(),
                bin.count.to_string(),
                bin.confidence.to_string(),
                bin.accuracy.to_string(),
                ok.to_string(),
            ])?;
        }
    }
    rel.flush()?;

    let band = report.sbc.baseline.band_half_width;
    let mut ecdf = csv::Writer::from_path(dir.join("ecdf.csv"))?;
    ecdf.write_record(["dimension", "u", "ecdf", "band_lower", "band_upper"])?;
    for d in &report.sbc.dims {
        for (&u, &e) in report.sbc.grid.iter().zip(&d.ecdf) {
            ecdf.write_record([
                d.name.clone(),
                u.to_string(),
                e.to_string(),
                (u - band).max(0.0).to_string(),
                (u + band).min(1.0).to_string(),
            ])?;
        }
    }
    ecdf.flush()?;

    let passes = report.passes(ECE_FACTOR);
    let summary = CalibrationSummary {
        model,
        posterior,
        passes,
        all_inside_band: report.sbc.all_inside_band(),
        mean_eod: report.sbc.mean_eod(),
        ece_within_baseline: report.reliability.iter().all(|r| r.within_baseline(ECE_FACTOR)),
        unreliable_bins: unreliable,
    };
    write_json(&dir.join("calibration.json"), &CalibrationOutput { summary, report })?;
    Ok(passes)
}

fn calibration_config(eval: &EvaluationConfig) -> CalibrationConfig {
    CalibrationConfig {
        n_test: eval.n_test,
        samples: eval.samples,
        bins: eval.bins,
        seed: eval.seed,
        baseline_mc: eval.baseline_mc,
    }
}

pub fn calibrate(args: CalibrateArgs) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(args.config.as_deref())?;
    if let Some(m) = args.model {
        cfg.model = Some(m);
    }
    let eval = &mut cfg.evaluation;
    if let Some(v) = args.n_test {
        eval.n_test = v;
    }
    if let Some(v) = args.s {
        eval.samples = v;
    }
    if let Some(v) = args.bins {
        eval.bins = v;
    }
    if let Some(v) = args.seed {
        eval.seed = v;
    }
    let sim = simulators::by_name(cfg.model_name()?)?;
    let (posterior, label): (Box<dyn PosteriorEstimator>, &str) = if args.reference {
        (reference::for_model(sim.name())?, "reference")
    } else {
        let ckpt = checkpoint_path(args.ckpt.as_ref(), &cfg)?;
        let est = load_estimator(&ckpt)?;
        check_compatible(&est, sim.as_ref())?;
        cfg.arch = Some(est.arch().clone());
        cfg.paths.checkpoint = Some(ckpt);
        (Box::new(est), "mnpe")
    };
    let report = calibration_report(posterior.as_ref(), sim.as_ref(), calibration_config(&cfg.evaluation))?;
    let dir = output_dir(args.out.as_deref().or(cfg.paths.out.as_deref()), "calibrate")?;
    let passes = write_calibration(&dir, sim.name(), label, &report)?;
    cfg.paths.out = Some(dir.clone());
    cfg.write_resolved(&dir)?;
    for d in &report.sbc.dims {
        println!(
            "{}: EoD {:.4}, max deviation {:.4} (band ±{:.4})",
            d.name,
            d.eod,
            d.max_above_diagonal().max(d.max_below_diagonal()),
            report.sbc.baseline.band_half_width
        );
    }
    for r in &report.reliability {
        println!(
            "{}: ECE {:.4} (half-normal baseline {:.4}, exact {})",
            r.name,
            r.ece,
            r.baseline_half_normal,
            r.baseline_exact.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
        );
    }
    println!("calibration {}", if passes { "passes" } else { "fails" });
    Ok(())
}

/// Prior-predictive test observations shared by every estimator evaluated
/// under the same evaluation seed.
fn test_observations(sim: &dyn Simulator, eval: &EvaluationConfig) -> Result<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(eval.seed);
    (0..eval.observations)
        .map(|_| {
            let (theta, _) = sim.sample_prior(&mut rng);
            Ok(sim.simulate(&theta, &mut rng)?)
        })
        .collect()
}

fn compare_to_reference(
    est: &Estimator,
    sim: &dyn Simulator,
    observations: &[Vec<f64>],
    eval: &EvaluationConfig,
) -> Result<Vec<PosteriorComparison>> {
    let reference = reference::for_model(sim.name())?;
    let space = sim.space();
    observations
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = ChaCha8Rng::seed_from_u64(eval.seed);
            rng.set_stream(i as u64 + 1);
            Ok(compare_posteriors(est, reference.as_ref(), x, eval.samples, &space, &eval.c2st, &mut rng)?)
        })
        .collect()
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

#[derive(Serialize)]
struct Evaluation<'a> {
    model: &'a str,
    mean_joint_c2st: f64,
    mean_marginal_c2st: Vec<(String, f64)>,
    comparisons: &'a [PosteriorComparison],
    predictive_mse: PredictiveMse,
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(args.config.as_deref())?;
    if let Some(m) = args.model {
        cfg.model = Some(m);
    }
    let eval = &mut cfg.evaluation;
    if let Some(v) = args.observations {
        eval.observations = v;
    }
    if let Some(v) = args.samples {
        eval.samples = v;
    }
    if let Some(v) = args.mse_test {
        eval.mse_test = v;
    }
    if let Some(v) = args.seed {
        eval.seed = v;
    }
    let sim = simulators::by_name(cfg.model_name()?)?;
    let ckpt = checkpoint_path(args.ckpt.as_ref(), &cfg)?;
    let est = load_estimator(&ckpt)?;
    check_compatible(&est, sim.as_ref())?;
    let eval = &cfg.evaluation;
    let observations = test_observations(sim.as_ref(), eval)?;
    let comparisons = compare_to_reference(&est, sim.as_ref(), &observations, eval)?;
    let mut rng = ChaCha8Rng::seed_from_u64(eval.seed);
    rng.set_stream(0);
    let mse = predictive_mse(&est, sim.as_ref(), eval.mse_test, &mut rng)?;

    let names: Vec<String> = io::samples_header(est.space());
    let dir = output_dir(args.out.as_deref().or(cfg.paths.out.as_deref()), "evaluate")?;
    let mut w = csv::Writer::from_path(dir.join("c2st.csv"))?;
    let mut header = vec!["observation".to_string(), "joint".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (i, c) in comparisons.iter().enumerate() {
        let mut rec = vec![i.to_string(), c.joint.to_string()];
        rec.extend(c.marginals.iter().map(|m| m.1.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    let out = Evaluation {
        model: sim.name(),
        mean_joint_c2st: mean(comparisons.iter().map(|c| c.joint)),
        mean_marginal_c2st: names
            .iter()
            .enumerate()
            .map(|(j, n)| (n.clone(), mean(comparisons.iter().map(|c| c.marginals[j].1))))
            .collect(),
        comparisons: &comparisons,
        predictive_mse: mse,
    };
    write_json(&dir.join("evaluation.json"), &out)?;
    println!(
        "mean joint C2ST {:.4} over {} observations; predictive MSE {:.4}",
        out.mean_joint_c2st,
        comparisons.len(),
        out.predictive_mse.mse
    );
    cfg.arch = Some(est.arch().clone());
    cfg.paths.checkpoint = Some(ckpt);
    cfg.paths.out = Some(dir.clone());
    cfg.write_resolved(&dir)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    TrainingFailed,
    ReferenceInvalid,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellResult {
    pub task: String,
    pub budget: usize,
    pub seed: u64,
    pub status: CellStatus,
    pub c2st_joint: Option<f64>,
    /// Mean over per-dimension C2ST scores.
    pub c2st_marginals: Option<f64>,
    pub eod: Option<f64>,
    pub ece: Option<f64>,
}

struct Cell {
    result: CellResult,
    marginals: Vec<(String, f64)>,
}

fn run_cell(
    sim: &dyn Simulator,
    cfg: &RunConfig,
    observations: &[Vec<f64>],
    budget: usize,
    seed: u64,
) -> Result<Cell> {
    let mut result = CellResult {
        task: sim.name().to_owned(),
        budget,
        seed,
        status: CellStatus::Ok,
        c2st_joint: None,
        c2st_marginals: None,
        eod: None,
        ece: None,
    };
    let data = simulate_dataset(sim, budget, seed)?;
    let mut train = cfg.train.clone();
    train.seed = seed;
    let arch = cfg.arch.clone().unwrap_or_else(|| sim.default_arch());
    let est = match Estimator::fit(sim.space(), &data, arch, sim.obs_transforms(), &train) {
        Ok((est, _)) => est,
        Err(Error::Training { .. }) => {
            result.status = CellStatus::TrainingFailed;
            return Ok(Cell {
                result,
                marginals: Vec::new(),
            });
        }
        Err(e) => return Err(e.into()),
    };
    let eval = &cfg.evaluation;
    let report = calibration_report(&est, sim, calibration_config(eval))?;
    result.eod = Some(report.sbc.mean_eod());
    if !report.reliability.is_empty() {
        result.ece = Some(mean(report.reliability.iter().map(|r| r.ece)));
    }
    let comparisons = match compare_to_reference(&est, sim, observations, eval) {
        Ok(c) => c,
        Err(e) if matches!(e.downcast_ref::<Error>(), Some(Error::ReferenceInvalid(_))) => {
            result.status = CellStatus::ReferenceInvalid;
            return Ok(Cell {
                result,
                marginals: Vec::new(),
            });
        }
        Err(e) => return Err(e),
    };
    result.c2st_joint = Some(mean(comparisons.iter().map(|c| c.joint)));
    result.c2st_marginals = Some(mean(comparisons.iter().map(PosteriorComparison::mean_marginal)));
    let marginals = io::samples_header(&sim.space())
        .into_iter()
        .enumerate()
        .map(|(j, name)| (name, mean(comparisons.iter().map(|c| c.marginals[j].1))))
        .collect();
    Ok(Cell { result, marginals })
}

pub fn benchmark(args: BenchmarkArgs) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(args.config.as_deref())?;
    if let Some(t) = args.task {
        cfg.model = Some(t);
    }
    if let Some(b) = args.budgets {
        cfg.evaluation.budgets = b;
    }
    if let Some(s) = args.seeds {
        cfg.evaluation.seeds = s;
    }
    let sim = simulators::by_name(cfg.model_name()?)?;
    if cfg.evaluation.budgets.is_empty() || cfg.evaluation.seeds.is_empty() {
        return Err(input_error("benchmark needs at least one budget and one seed"));
    }
    if cfg.arch.is_none() {
        cfg.arch = Some(sim.default_arch());
    }
    let dir = output_dir(args.out.as_deref().or(cfg.paths.out.as_deref()), "benchmark")?;
    cfg.paths.out = Some(dir.clone());
    cfg.write_resolved(&dir)?;

    let observations = test_observations(sim.as_ref(), &cfg.evaluation)?;
    let mut results = csv::Writer::from_path(dir.join("results.csv"))?;
    let mut marginals = csv::Writer::from_path(dir.join("marginals.csv"))?;
    marginals.write_record(["task", "budget", "seed", "dimension", "c2st"])?;
    let mut timings = csv::Writer::from_path(dir.join("timings.csv"))?;
    timings.write_record(["task", "budget", "seed", "wall_time"])?;
    for &budget in &cfg.evaluation.budgets {
        for &seed in &cfg.evaluation.seeds {
            let start = Instant::now();
            let cell = run_cell(sim.as_ref(), &cfg, &observations, budget, seed)
                .with_context(|| format!("benchmark cell budget {budget}, seed {seed}"))?;
            let wall = start.elapsed().as_secs_f64();
            let r = &cell.result;
            println!(
                "{} budget {budget} seed {seed}: {:?} joint C2ST {} ({wall:.1}s)",
                r.task,
                r.status,
                r.c2st_joint.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
            );
            results.serialize(r)?;
            for (name, score) in &cell.marginals {
                marginals.write_record([r.task.clone(), budget.to_string(), seed.to_string(), name.clone(), score.to_string()])?;
            }
            timings.write_record([r.task.clone(), budget.to_string(), seed.to_string(), wall.to_string()])?;
            results.flush()?;
            marginals.flush()?;
            timings.flush()?;
        }
    }
    Ok(())
}
