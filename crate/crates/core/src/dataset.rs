//! Simulated `(θ, x)` tables with a CSV on-disk form and a JSON sidecar.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::made::DiscreteSchema;
use crate::nn::Matrix;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub simulator: String,
    pub seed: u64,
    pub n_requested: usize,
    /// Prior draws discarded by the simulator's admissibility rule.
    pub n_rejected: usize,
}

impl DatasetMeta {
    /// Rejected draws over all prior draws.
    pub fn rejection_fraction(&self) -> f64 {
        let total = self.n_requested + self.n_rejected;
        if total == 0 {
            0.0
        } else {
            self.n_rejected as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub theta_d: Vec<Vec<usize>>,
    pub theta_c: Matrix<f64>,
    pub x: Matrix<f64>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(theta_d: Vec<Vec<usize>>, theta_c: Matrix<f64>, x: Matrix<f64>, meta: DatasetMeta) -> Result<Self> {
        let n = x.rows();
        if theta_d.len() != n || theta_c.rows() != n {
            return Err(Error::Input(format!(
                "row counts differ: θ_d {}, θ_c {}, x {}",
                theta_d.len(),
                theta_c.rows(),
                n
            )));
        }
        let l = theta_d.first().map_or(0, Vec::len);
        if theta_d.iter().any(|t| t.len() != l) {
            return Err(Error::Input("ragged discrete parameter rows".into()));
        }
        Ok(Self { theta_d, theta_c, x, meta })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn discrete_dim(&self) -> usize {
        self.theta_d.first().map_or(0, Vec::len)
    }

    pub fn continuous_dim(&self) -> usize {
        self.theta_c.cols()
    }

    pub fn obs_dim(&self) -> usize {
        self.x.cols()
    }

    /// Check column counts, class ranges and finiteness against a schema.
    pub fn check(&self, schema: &DiscreteSchema, k: usize) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Input("dataset is empty".into()));
        }
        if self.discrete_dim() != schema.len() {
            return Err(Error::shape("dataset discrete columns", schema.len(), self.discrete_dim()));
        }
        if self.continuous_dim() != k {
            return Err(Error::shape("dataset continuous columns", k, self.continuous_dim()));
        }
        for (i, t) in self.theta_d.iter().enumerate() {
            schema
                .check(t)
                .map_err(|e| Error::Input(format!("row {i}: {e}")))?;
        }
        if !self.theta_c.all_finite() || !self.x.all_finite() {
            return Err(Error::Input("dataset contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            theta_d: rows.iter().map(|&r| self.theta_d[r].clone()).collect(),
            theta_c: self.theta_c.select_rows(rows),
            x: self.x.select_rows(rows),
            meta: self.meta.clone(),
        }
    }

    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = (0..self.discrete_dim()).map(|i| format!("theta_d_{i}")).collect();
        h.extend((0..self.continuous_dim()).map(|i| format!("theta_c_{i}")));
        h.extend((0..self.obs_dim()).map(|i| format!("x_{i}")));
        h
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(self.header())?;
        let mut rec = Vec::with_capacity(self.header().len());
        for r in 0..self.len() {
            rec.clear();
            rec.extend(self.theta_d[r].iter().map(|v| v.to_string()));
            rec.extend(self.theta_c.row(r).iter().map(|v| v.to_string()));
            rec.extend(self.x.row(r).iter().map(|v| v.to_string()));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R, meta: DatasetMeta) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header: Vec<String> = rd.headers()?.iter().map(str::to_owned).collect();
        let (l, k, d) = parse_header(&header)?;
        let mut theta_d = Vec::new();
        let mut theta_c = Vec::new();
        let mut x = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let rec = rec?;
            let field = |j: usize| rec.get(j).unwrap_or("");
            let mut td = Vec::with_capacity(l);
            for j in 0..l {
                td.push(field(j).trim().parse::<usize>().map_err(|_| {
                    Error::Input(format!("row {}: '{}' is not a class index", i + 1, field(j)))
                })?);
            }
            theta_d.push(td);
            for j in l..l + k + d {
                let v = field(j)
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Input(format!("row {}: '{}' is not a number", i + 1, field(j))))?;
                if j < l + k {
                    theta_c.push(v);
                } else {
                    x.push(v);
                }
            }
        }
        let n = theta_d.len();
        Self::new(theta_d, Matrix::from_vec(n, k, theta_c)?, Matrix::from_vec(n, d, x)?, meta)
    }

    pub fn meta_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".meta.json");
        PathBuf::from(s)
    }

    /// Write `path` and its `<path>.meta.json` sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))?;
        std::fs::write(Self::meta_path(path), serde_json::to_string_pretty(&self.meta)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let meta: DatasetMeta = serde_json::from_slice(&std::fs::read(Self::meta_path(path))?)?;
        Self::read_csv(std::io::BufReader::new(std::fs::File::open(path)?), meta)
    }
}

fn parse_header(h: &[String]) -> Result<(usize, usize, usize)> {
    let count = |prefix: &str, start: usize| {
        h[start..]
            .iter()
            .enumerate()
            .take_while(|(i, name)| **name == format!("{prefix}{i}"))
            .count()
    };
    let l = count("theta_d_", 0);
    let k = count("theta_c_", l);
    let d = count("x_", l + k);
    if l + k + d != h.len() {
        return Err(Error::Input(format!(
            "unexpected column '{}'; expected theta_d_*, theta_c_*, x_* in order",
            h[l + k + d]
        )));
    }
    if d == 0 {
        return Err(Error::Input("dataset has no observation columns".into()));
    }
    Ok((l, k, d))
}
