//! Chain configuration, retained draws, and their CSV/JSON serialization.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, column_means, Matrix, SymMatrix};
use crate::model::{in_support, ParamVec, Support};

/// Random-walk proposal shape. The step is `scale · L z` with L the Cholesky factor
/// of the covariance (or the diagonal of standard deviations).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Proposal {
    StdDevs(Vec<f64>),
    Covariance(SymMatrix<f64>),
}

impl Proposal {
    pub fn dim(&self) -> usize {
        match self {
            Proposal::StdDevs(s) => s.len(),
            Proposal::Covariance(c) => c.dim(),
        }
    }

    /// Lower-triangular factor of the proposal covariance.
    pub fn factor(&self) -> Result<Matrix<f64>> {
        match self {
            Proposal::StdDevs(s) => {
                if s.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                    return Err(Error::InvalidArgument(format!("proposal scales must be positive: {s:?}")));
                }
                Ok(Matrix::from_diagonal(s))
            }
            Proposal::Covariance(c) => cholesky(&c.to_dense()),
        }
    }

    /// Restriction to a coordinate subset.
    pub fn select(&self, coords: &[usize]) -> Result<Proposal> {
        Ok(match self {
            Proposal::StdDevs(s) => Proposal::StdDevs(coords.iter().map(|&i| s[i]).collect()),
            Proposal::Covariance(c) => {
                Proposal::Covariance(SymMatrix::from_lower_fn(coords.len(), |i, j| c.get(coords[i], coords[j]))?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptConfig {
    pub enabled: bool,
    /// Defaults to 0.234 for multivariate and 0.44 for univariate updates.
    #[serde(default)]
    pub target_acceptance: Option<f64>,
    #[serde(default = "default_window")]
    pub window: usize,
    /// Re-estimate the proposal covariance from the first half of burn-in.
    #[serde(default)]
    pub learn_covariance: bool,
    /// Consecutive adaptation windows without an accepted move before giving up.
    #[serde(default = "default_stall_windows")]
    pub stall_windows: usize,
}

fn default_window() -> usize {
    50
}

fn default_stall_windows() -> usize {
    20
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            target_acceptance: None,
            window: default_window(),
            learn_covariance: false,
            stall_windows: default_stall_windows(),
        }
    }
}

impl AdaptConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn target_for(&self, dim: usize) -> f64 {
        self.target_acceptance
            .unwrap_or(if dim == 1 { 0.44 } else { 0.234 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    /// Total iterations including burn-in.
    pub iterations: usize,
    pub burn_in: usize,
    #[serde(default = "one")]
    pub thin: usize,
    pub initial: Vec<f64>,
    pub proposal: Proposal,
    #[serde(default)]
    pub adapt: AdaptConfig,
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl ChainConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidArgument(format!(
                "burn-in {} must be below total iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidArgument("thin must be at least 1".into()));
        }
        if self.initial.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: self.initial.len(),
            });
        }
        if self.proposal.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: self.proposal.dim(),
            });
        }
        if self.adapt.enabled && self.adapt.window == 0 {
            return Err(Error::InvalidArgument("adaptation window must be positive".into()));
        }
        self.proposal.factor().map(|_| ())
    }

    /// Number of retained draws.
    pub fn kept(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }
}

/// Which transform, if any, produced the draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adjusted {
    Raw,
    Ofs,
    Curvature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockStats {
    pub name: String,
    pub accepted: u64,
    pub proposed: u64,
}

impl BlockStats {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Sidecar metadata written next to the draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMeta {
    pub names: Vec<String>,
    pub supports: Vec<Support>,
    pub seed: u64,
    pub config: Option<ChainConfig>,
    pub adjusted: Adjusted,
    /// Accepted moves over proposals during the retained (post burn-in) phase.
    pub acceptance_rate: f64,
    pub accepted: u64,
    pub proposed: u64,
    /// Transformed points that fell outside the parameter support.
    pub support_violations: u64,
    #[serde(default)]
    pub blocks: Vec<BlockStats>,
    /// Final proposal scale multiplier after adaptation.
    #[serde(default)]
    pub proposal_scale: Vec<f64>,
}

/// Retained draws with names, log values and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    draws: Matrix<f64>,
    log_values: Vec<f64>,
    meta: ChainMeta,
}

impl Chain {
    pub fn new(draws: Matrix<f64>, log_values: Vec<f64>, meta: ChainMeta) -> Result<Self> {
        if draws.cols() != meta.names.len() || meta.supports.len() != meta.names.len() {
            return Err(Error::DimensionMismatch {
                expected: meta.names.len(),
                found: draws.cols(),
            });
        }
        if log_values.len() != draws.rows() {
            return Err(Error::DimensionMismatch {
                expected: draws.rows(),
                found: log_values.len(),
            });
        }
        if meta.adjusted == Adjusted::Raw || meta.adjusted == Adjusted::Curvature {
            for r in 0..draws.rows() {
                if !in_support(draws.row(r), &meta.supports) {
                    return Err(Error::InvalidArgument(format!("draw {r} lies outside the parameter support")));
                }
            }
        }
        Ok(Self {
            draws,
            log_values,
            meta,
        })
    }

    pub fn draws(&self) -> &Matrix<f64> {
        &self.draws
    }

    pub fn log_values(&self) -> &[f64] {
        &self.log_values
    }

    pub fn meta(&self) -> &ChainMeta {
        &self.meta
    }

    pub fn names(&self) -> &[String] {
        &self.meta.names
    }

    pub fn supports(&self) -> &[Support] {
        &self.meta.supports
    }

    pub fn len(&self) -> usize {
        self.draws.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.draws.cols()
    }

    pub fn adjusted(&self) -> Adjusted {
        self.meta.adjusted
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.meta.acceptance_rate
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.draws.column(j)
    }

    pub fn coordinate_index(&self, name: &str) -> Result<usize> {
        self.meta
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::InvalidArgument(format!("no coordinate named `{name}`")))
    }

    /// Same metadata, new draws; used by transforms.
    pub(crate) fn with_draws(&self, draws: Matrix<f64>, adjusted: Adjusted, support_violations: u64) -> Self {
        let mut meta = self.meta.clone();
        meta.adjusted = adjusted;
        meta.support_violations = support_violations;
        Self {
            draws,
            log_values: self.log_values.clone(),
            meta,
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header: Vec<&str> = self.meta.names.iter().map(String::as_str).collect();
        header.push("log_value");
        wtr.write_record(&header)?;
        for r in 0..self.len() {
            let mut rec: Vec<String> = self.draws.row(r).iter().map(|x| format!("{x:?}")).collect();
            rec.push(format!("{:?}", self.log_values[r]));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads draws written by [`Chain::write_csv`]; names must agree with `meta`.
    pub fn read_csv<R: Read>(r: R, meta: ChainMeta) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let p = meta.names.len();
        if header.len() != p + 1 || header[..p] != meta.names[..] || header[p] != "log_value" {
            return Err(Error::Format(format!(
                "chain header {header:?} does not match metadata names {:?} + log_value",
                meta.names
            )));
        }
        let mut data = Vec::new();
        let mut logs = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            for (k, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Format(format!("row {}: bad number `{field}`", line + 2)))?;
                if k < p {
                    data.push(v);
                } else {
                    logs.push(v);
                }
            }
        }
        let rows = logs.len();
        Self::new(Matrix::from_row_major(rows, p, data)?, logs, meta)
    }

    /// Writes `<stem>.csv` and `<stem>.json`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(BufWriter::new(File::create(dir.join(format!("{stem}.csv")))?))?;
        let mut f = BufWriter::new(File::create(dir.join(format!("{stem}.json")))?);
        serde_json::to_writer_pretty(&mut f, &self.meta)?;
        f.write_all(b"\n")?;
        f.flush()?;
        Ok(())
    }

    /// Loads from a CSV path whose sidecar is the same path with a `.json` extension.
    pub fn load(csv_path: &Path) -> Result<Self> {
        let meta_path = csv_path.with_extension("json");
        let meta: ChainMeta = serde_json::from_reader(BufReader::new(File::open(&meta_path)?))?;
        Self::read_csv(BufReader::new(File::open(csv_path)?), meta)
    }
}

/// Coordinatewise mean of the retained draws (the estimator under squared-error loss).
pub fn quasi_bayes_estimate(chain: &Chain) -> Result<ParamVec> {
    if chain.is_empty() {
        return Err(Error::Empty("chain"));
    }
    ParamVec::new(
        column_means(chain.draws()),
        chain.names().to_vec(),
        chain.supports().to_vec(),
    )
}
