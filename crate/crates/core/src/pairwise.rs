//! Pairwise composite likelihood for replicated mean-zero Gaussian random fields.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gp::covariance::CovarianceFamily;
use crate::gp::data::fmt;
use crate::gp::likelihood::{covariance_matrix, draw_correlated};
use crate::gp::taper::Locations;
use crate::linalg::{cholesky, Matrix, SymMatrix};
use crate::model::{Capabilities, ObjectiveModel, Support};
use crate::seed::rng_from_seed;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// R independent realizations at the same m sites, with the m × m Gram matrix Y'Y cached.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicatedDataset {
    values: Matrix<f64>,
    locations: Locations<f64>,
    gram: SymMatrix<f64>,
}

impl ReplicatedDataset {
    /// `values` is replicates × sites.
    pub fn new(values: Matrix<f64>, locations: Locations<f64>) -> Result<Self> {
        if values.cols() != locations.len() {
            return Err(Error::DimensionMismatch {
                expected: locations.len(),
                found: values.cols(),
            });
        }
        if values.rows() == 0 {
            return Err(Error::Empty("replicates"));
        }
        let (r, m) = (values.rows(), values.cols());
        let gram = SymMatrix::from_lower_fn(m, |i, j| (0..r).map(|k| values[(k, i)] * values[(k, j)]).sum())?;
        Ok(Self {
            values,
            locations,
            gram,
        })
    }

    pub fn replicates(&self) -> usize {
        self.values.rows()
    }

    pub fn sites(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix<f64> {
        &self.values
    }

    pub fn locations(&self) -> &Locations<f64> {
        &self.locations
    }

    pub fn gram(&self) -> &SymMatrix<f64> {
        &self.gram
    }

    /// Columns `replicate, x, y[, t], value`, one row per (replicate, site).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let timed = self.locations.times.is_some();
        let mut header = vec!["replicate", "x", "y"];
        if timed {
            header.push("t");
        }
        header.push("value");
        wtr.write_record(&header)?;
        for r in 0..self.replicates() {
            for s in 0..self.sites() {
                let c = self.locations.coords[s];
                let mut rec = vec![r.to_string(), fmt(c[0]), fmt(c[1])];
                if let Some(t) = &self.locations.times {
                    rec.push(fmt(t[s]));
                }
                rec.push(fmt(self.values[(r, s)]));
                wtr.write_record(&rec)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads the layout of [`Self::write_csv`]; rows must be grouped by replicate with
    /// sites in the same order in every replicate.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let col = |name: &str| header.iter().position(|h| h == name);
        let (ri, xi, yi, vi) = match (col("replicate"), col("x"), col("y"), col("value")) {
            (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
            _ => return Err(Error::Format("replicated CSV needs columns replicate, x, y, value".into())),
        };
        let ti = col("t");
        let mut rows: Vec<(usize, [f64; 2], Option<f64>, f64)> = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |k: usize| Error::Format(format!("row {}: bad value in column {}", line + 2, header[k]));
            let num = |k: usize| -> Result<f64> { rec.get(k).and_then(|s| s.trim().parse().ok()).ok_or_else(|| bad(k)) };
            let rep: usize = rec.get(ri).and_then(|s| s.trim().parse().ok()).ok_or_else(|| bad(ri))?;
            rows.push((rep, [num(xi)?, num(yi)?], ti.map(num).transpose()?, num(vi)?));
        }
        let m = rows.iter().take_while(|r| r.0 == rows[0].0).count();
        if m == 0 || rows.len() % m != 0 {
            return Err(Error::Format("replicates must all cover the same sites".into()));
        }
        let reps = rows.len() / m;
        for (k, row) in rows.iter().enumerate() {
            let site = &rows[k % m];
            if row.0 != rows[(k / m) * m].0 || row.1 != site.1 || row.2 != site.2 {
                return Err(Error::Format(format!("row {}: site layout differs between replicates", k + 2)));
            }
        }
        let coords = rows[..m].iter().map(|r| r.1).collect();
        let times = ti.map(|_| rows[..m].iter().map(|r| r.2.unwrap_or(0.0)).collect());
        let values = Matrix::from_row_major(reps, m, rows.iter().map(|r| r.3).collect())?;
        Self::new(values, Locations::new(coords, times)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Pair {
    i: usize,
    j: usize,
    h: f64,
    u: f64,
}

/// Sum over unordered site pairs (i < j) of bivariate normal log densities.
#[derive(Debug, Clone)]
pub struct PairwiseModel {
    template: CovarianceFamily<f64>,
    locations: Locations<f64>,
    pairs: Vec<Pair>,
    /// Replicates per simulated dataset.
    replicates: usize,
}

impl PairwiseModel {
    pub fn new(template: CovarianceFamily<f64>, locations: Locations<f64>, replicates: usize) -> Result<Self> {
        template.validate()?;
        if locations.len() < 2 {
            return Err(Error::InvalidArgument("pairwise likelihood needs at least two sites".into()));
        }
        if replicates == 0 {
            return Err(Error::InvalidArgument("replicate count must be positive".into()));
        }
        let m = locations.len();
        let mut pairs = Vec::with_capacity(m * (m - 1) / 2);
        for i in 0..m {
            for j in i + 1..m {
                pairs.push(Pair {
                    i,
                    j,
                    h: locations.distance(i, j),
                    u: locations.time_lag(i, j),
                });
            }
        }
        Ok(Self {
            template,
            locations,
            pairs,
            replicates,
        })
    }

    pub fn locations(&self) -> &Locations<f64> {
        &self.locations
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }

    /// Sites in pair order.
    pub fn pair_sites(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pairs.iter().map(|p| (p.i, p.j))
    }

    pub fn family(&self, theta: &[f64]) -> Result<CovarianceFamily<f64>> {
        self.template.with_params(theta)
    }

    fn check(&self, data: &ReplicatedDataset) -> Result<()> {
        if data.sites() != self.locations.len() {
            return Err(Error::DimensionMismatch {
                expected: self.locations.len(),
                found: data.sites(),
            });
        }
        Ok(())
    }

    /// Pairwise log-likelihood given the sufficient statistics: `r` replicates with
    /// Gram matrix `s`.
    fn loglik_gram(&self, fam: &CovarianceFamily<f64>, s: &SymMatrix<f64>, r: f64) -> Result<f64> {
        let c0 = fam.entry(0.0, 0.0, true);
        let mut total = 0.0;
        for p in &self.pairs {
            let ch = fam.entry(p.h, p.u, false);
            let det = c0 * c0 - ch * ch;
            if !(det > 0.0) {
                return Err(Error::NotPositiveDefinite {
                    eigenvalue: c0 - ch.abs(),
                    largest: c0 + ch.abs(),
                });
            }
            let quad = c0 * (s.get(p.i, p.i) + s.get(p.j, p.j)) - 2.0 * ch * s.get(p.i, p.j);
            total += -r * LN_2PI - 0.5 * r * det.ln() - quad / (2.0 * det);
        }
        Ok(total)
    }

    fn score_gram(&self, fam: &CovarianceFamily<f64>, s: &SymMatrix<f64>, r: f64) -> Result<Vec<f64>> {
        let np = fam.n_params();
        let mut d0 = vec![0.0; np];
        let mut dh = vec![0.0; np];
        fam.gradient(0.0, 0.0, true, &mut d0);
        let c0 = fam.entry(0.0, 0.0, true);
        let mut g = vec![0.0; np];
        for p in &self.pairs {
            let ch = fam.entry(p.h, p.u, false);
            fam.gradient(p.h, p.u, false, &mut dh);
            let det = c0 * c0 - ch * ch;
            if !(det > 0.0) {
                return Err(Error::NotPositiveDefinite {
                    eigenvalue: c0 - ch.abs(),
                    largest: c0 + ch.abs(),
                });
            }
            let a = s.get(p.i, p.i) + s.get(p.j, p.j);
            let b = s.get(p.i, p.j);
            let num = c0 * a - 2.0 * ch * b;
            for k in 0..np {
                let ddet = 2.0 * (c0 * d0[k] - ch * dh[k]);
                let dnum = d0[k] * a - 2.0 * dh[k] * b;
                g[k] += -0.5 * r * ddet / det - (dnum * det - num * ddet) / (2.0 * det * det);
            }
        }
        Ok(g)
    }

    /// Score of replicate `k` alone.
    pub fn replicate_gradient(&self, theta: &[f64], data: &ReplicatedDataset, k: usize) -> Result<Vec<f64>> {
        self.check(data)?;
        if k >= data.replicates() {
            return Err(Error::InvalidArgument(format!("replicate {k} out of range")));
        }
        let y = data.values.row(k);
        let m = y.len();
        let s = SymMatrix::from_lower_fn(m, |i, j| y[i] * y[j])?;
        self.score_gram(&self.family(theta)?, &s, 1.0)
    }
}

impl ObjectiveModel for PairwiseModel {
    type Data = ReplicatedDataset;

    fn param_names(&self) -> Vec<String> {
        self.template.free_param_names()
    }

    fn supports(&self) -> Vec<Support> {
        self.template.free_param_supports()
    }

    fn log_objective(&self, theta: &[f64], data: &ReplicatedDataset) -> Result<f64> {
        self.check(data)?;
        self.loglik_gram(&self.family(theta)?, &data.gram, data.replicates() as f64)
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            per_replicate_score: true,
            analytic_gradient: true,
            analytic_p: false,
            analytic_q: false,
            simulate: true,
        }
    }

    fn gradient(&self, theta: &[f64], data: &ReplicatedDataset) -> Result<Vec<f64>> {
        self.check(data)?;
        self.score_gram(&self.family(theta)?, &data.gram, data.replicates() as f64)
    }

    fn replicate_count(&self, data: &ReplicatedDataset) -> usize {
        data.replicates()
    }

    fn replicate_score(&self, theta: &[f64], data: &ReplicatedDataset, r: usize) -> Result<Vec<f64>> {
        self.replicate_gradient(theta, data, r)
    }

    fn simulate(&self, theta: &[f64], seed: u64) -> Result<ReplicatedDataset> {
        simulate_replicates(&self.family(theta)?, &self.locations, self.replicates, seed)
    }
}

/// Pairwise log-likelihood of `data` under `theta`.
pub fn pairwise_loglik(model: &PairwiseModel, theta: &[f64], data: &ReplicatedDataset) -> Result<f64> {
    model.log_objective(theta, data)
}

/// Analytic per-replicate score.
pub fn pairwise_score(model: &PairwiseModel, theta: &[f64], data: &ReplicatedDataset, replicate: usize) -> Result<Vec<f64>> {
    model.replicate_gradient(theta, data, replicate)
}

/// R independent mean-zero field draws from one RNG stream; with R = 1 this is the
/// draw of [`crate::gp::simulate_gp`] on the same seed.
pub fn simulate_replicates(
    family: &CovarianceFamily<f64>,
    locations: &Locations<f64>,
    replicates: usize,
    seed: u64,
) -> Result<ReplicatedDataset> {
    let l = cholesky(&covariance_matrix(family, locations)?)?;
    let mut rng = rng_from_seed(seed);
    let m = locations.len();
    let mut values = Vec::with_capacity(replicates * m);
    for _ in 0..replicates {
        values.extend(draw_correlated(&l, None, &mut rng));
    }
    ReplicatedDataset::new(Matrix::from_row_major(replicates, m, values)?, locations.clone())
}

/// Mean per-replicate score over many simulated replicates, in parallel chunks.
pub fn mean_replicate_score(model: &PairwiseModel, theta: &[f64], replicates: usize, seed: u64) -> Result<Vec<f64>> {
    let fam = model.family(theta)?;
    let chunks = 16usize;
    let per = replicates.div_ceil(chunks);
    let parts: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let r = per.min(replicates.saturating_sub(c * per));
            if r == 0 {
                return Ok(vec![0.0; fam.n_params()]);
            }
            let d = simulate_replicates(&fam, &model.locations, r, crate::seed::split_seed(seed, c as u64))?;
            model.gradient(theta, &d)
        })
        .collect::<Result<_>>()?;
    let mut g = vec![0.0; fam.n_params()];
    for part in parts {
        for (a, b) in g.iter_mut().zip(part) {
            *a += b;
        }
    }
    Ok(g.into_iter().map(|x| x / replicates as f64).collect())
}
