//! Boundary conversions: output directories, observation parsing and the
//! mapping between internal class indices and user-facing labels.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mnpe::estimator::MixedParamSpace;
use mnpe::posterior::{MixedSample, MixedSamples};
use mnpe::simulators::{self, COAL_DISASTERS, FIRST_YEAR, MIN_SERVERS, MODEL_NAMES};
use mnpe::Error;

pub const OUT_ROOT_VAR: &str = "MNPE_OUT_ROOT";

/// `--out` if given, else `$MNPE_OUT_ROOT/<command>`, else `mnpe-out/<command>`.
pub fn output_dir(out: Option<&Path>, command: &str) -> Result<PathBuf> {
    let dir = match out {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(OUT_ROOT_VAR)
            .map_or_else(|| PathBuf::from("mnpe-out"), PathBuf::from)
            .join(command),
    };
    std::fs::create_dir_all(&dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

/// The registered model whose parameter space equals `space`.
pub fn model_for_space(space: &MixedParamSpace) -> Option<&'static str> {
    MODEL_NAMES
        .into_iter()
        .find(|name| simulators::by_name(name).is_ok_and(|s| s.space() == *space))
}

/// Value added to class indices at the I/O boundary (calendar years for
/// the switchpoint, server counts for the queue).
pub fn label_offset(model: Option<&str>) -> usize {
    match model {
        Some("coal_changepoint") => FIRST_YEAR,
        Some("tandem_queue") => MIN_SERVERS,
        _ => 0,
    }
}

pub fn samples_header(space: &MixedParamSpace) -> Vec<String> {
    let mut h: Vec<String> = space.discrete.dims().iter().map(|d| d.name.clone()).collect();
    h.extend(space.continuous.iter().cloned());
    h
}

pub fn write_samples(path: &Path, space: &MixedParamSpace, samples: &MixedSamples, offset: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(samples_header(space))?;
    for i in 0..samples.len() {
        let mut rec: Vec<String> = samples.theta_d[i].iter().map(|c| (c + offset).to_string()).collect();
        rec.extend(samples.theta_c.row(i).iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_numbers(text: &str) -> Result<Vec<f64>> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Input(format!("'{t}' is not a number")).into())
        })
        .collect()
}

/// An observation given inline (`1.0` or `0.5,2,3`), as `historical` for
/// the recorded disaster series, or as a file whose first numeric line is
/// the observation (a header line is skipped).
pub fn parse_obs(spec: &str, model: Option<&str>) -> Result<Vec<f64>> {
    if spec == "historical" {
        return match model {
            Some("coal_changepoint") => Ok(COAL_DISASTERS.to_vec()),
            _ => Err(Error::Input("'historical' is only defined for coal_changepoint".into()).into()),
        };
    }
    let path = Path::new(spec);
    if path.is_file() {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let first = lines
            .next()
            .ok_or_else(|| Error::Input(format!("{} is empty", path.display())))?;
        return match parse_numbers(first) {
            Ok(v) => Ok(v),
            Err(_) => parse_numbers(
                lines
                    .next()
                    .ok_or_else(|| Error::Input(format!("{} has a header but no values", path.display())))?,
            ),
        };
    }
    parse_numbers(spec)
}

/// Parameter vector in header order: discrete labels, then continuous values.
pub fn parse_theta(spec: &str, space: &MixedParamSpace, offset: usize) -> Result<MixedSample> {
    let v = parse_numbers(spec)?;
    let (l, k) = (space.l(), space.k());
    if v.len() != l + k {
        return Err(Error::Input(format!(
            "--theta needs {} values ({}), got {}",
            l + k,
            samples_header(space).join(", "),
            v.len()
        ))
        .into());
    }
    let mut theta_d = Vec::with_capacity(l);
    for (i, &label) in v[..l].iter().enumerate() {
        let class = label - offset as f64;
        if class.fract() != 0.0 || class < 0.0 || class >= space.discrete.classes(i) as f64 {
            return Err(Error::Input(format!(
                "{} = {label} is not a valid label (expected {}..={})",
                space.discrete.dims()[i].name,
                offset,
                offset + space.discrete.classes(i) - 1
            ))
            .into());
        }
        theta_d.push(class as usize);
    }
    Ok(MixedSample {
        theta_d,
        theta_c: v[l..].to_vec(),
    })
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}
