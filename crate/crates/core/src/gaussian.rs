//! Gaussian mean model: n iid draws yᵢ ~ N(θ, V) scored with a working precision M.
//!
//! ℓ(θ) = −½ Σᵢ (yᵢ − θ)'M(yᵢ − θ), so Q = nM and P = nMVM. With M = V⁻¹ the
//! objective is the exact log-likelihood up to a constant.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::gp::data::fmt;
use crate::linalg::{spd_inverse, Matrix, SpdMatrix};
use crate::model::{Capabilities, ObjectiveModel, Support};
use crate::seed::rng_from_seed;

/// n replicates of a p-vector, with the sum and scatter cached.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSample {
    values: Matrix<f64>,
    sum: Vec<f64>,
    scatter: Matrix<f64>,
}

impl GaussianSample {
    pub fn new(values: Matrix<f64>) -> Result<Self> {
        if values.rows() == 0 {
            return Err(Error::Empty("sample"));
        }
        let (n, p) = (values.rows(), values.cols());
        let mut sum = vec![0.0; p];
        let mut scatter = Matrix::zeros(p, p);
        for r in 0..n {
            let y = values.row(r);
            for i in 0..p {
                sum[i] += y[i];
                for j in 0..p {
                    scatter[(i, j)] += y[i] * y[j];
                }
            }
        }
        Ok(Self { values, sum, scatter })
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix<f64> {
        &self.values
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.len() as f64;
        self.sum.iter().map(|s| s / n).collect()
    }

    /// Header `y1..yp`, one row per replicate.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record((1..=self.dim()).map(|k| format!("y{k}")))?;
        for r in 0..self.len() {
            wtr.write_record(self.values.row(r).iter().map(|&v| fmt(v)))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let p = rdr.headers()?.len();
        let mut vals = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            for s in rec.iter() {
                vals.push(
                    s.trim()
                        .parse()
                        .map_err(|_| Error::Format(format!("row {}: bad number {s:?}", line + 2)))?,
                );
            }
        }
        let n = vals.len() / p.max(1);
        Self::new(Matrix::from_row_major(n, p, vals)?)
    }
}

#[derive(Debug, Clone)]
pub struct GaussianMeanModel {
    /// Covariance of the data-generating distribution.
    truth_cov: SpdMatrix<f64>,
    /// Working precision in the objective.
    precision: SpdMatrix<f64>,
    n: usize,
}

impl GaussianMeanModel {
    /// The exact likelihood: M = V⁻¹.
    pub fn exact(cov: SpdMatrix<f64>, n: usize) -> Result<Self> {
        let precision = spd_inverse(&cov)?;
        Self::misspecified(cov, precision, n)
    }

    /// A quasi-likelihood with working precision `precision` while data have covariance `cov`.
    pub fn misspecified(cov: SpdMatrix<f64>, precision: SpdMatrix<f64>, n: usize) -> Result<Self> {
        if cov.dim() != precision.dim() {
            return Err(Error::DimensionMismatch {
                expected: cov.dim(),
                found: precision.dim(),
            });
        }
        if n == 0 {
            return Err(Error::InvalidArgument("sample size must be positive".into()));
        }
        Ok(Self {
            truth_cov: cov,
            precision,
            n,
        })
    }

    pub fn sample_size(&self) -> usize {
        self.n
    }

    fn check(&self, data: &GaussianSample) -> Result<()> {
        if data.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: data.dim(),
            });
        }
        Ok(())
    }
}

impl ObjectiveModel for GaussianMeanModel {
    type Data = GaussianSample;

    fn param_names(&self) -> Vec<String> {
        (1..=self.precision.dim()).map(|k| format!("mu{k}")).collect()
    }

    fn supports(&self) -> Vec<Support> {
        vec![Support::AllReals; self.precision.dim()]
    }

    fn log_objective(&self, theta: &[f64], data: &GaussianSample) -> Result<f64> {
        self.check(data)?;
        // Σ(y−θ)'M(y−θ) = tr(M S) − 2θ'M s + n θ'Mθ with S the scatter and s the sum.
        let p = self.dim();
        let n = data.len() as f64;
        let mut total = 0.0;
        for i in 0..p {
            for j in 0..p {
                let m = self.precision.get(i, j);
                total += m * (data.scatter[(j, i)] - 2.0 * theta[i] * data.sum[j] + n * theta[i] * theta[j]);
            }
        }
        Ok(-0.5 * total)
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            per_replicate_score: true,
            analytic_gradient: true,
            analytic_p: true,
            analytic_q: true,
            simulate: true,
        }
    }

    fn gradient(&self, theta: &[f64], data: &GaussianSample) -> Result<Vec<f64>> {
        self.check(data)?;
        let n = data.len() as f64;
        let r: Vec<f64> = data.sum.iter().zip(theta).map(|(s, t)| s - n * t).collect();
        self.precision.to_dense().matvec(&r)
    }

    fn replicate_count(&self, data: &GaussianSample) -> usize {
        data.len()
    }

    fn replicate_score(&self, theta: &[f64], data: &GaussianSample, r: usize) -> Result<Vec<f64>> {
        self.check(data)?;
        let d: Vec<f64> = data.values.row(r).iter().zip(theta).map(|(y, t)| y - t).collect();
        self.precision.to_dense().matvec(&d)
    }

    fn simulate(&self, theta: &[f64], seed: u64) -> Result<GaussianSample> {
        let l = self.truth_cov.cholesky()?;
        let mut rng = rng_from_seed(seed);
        let mut vals = Vec::with_capacity(self.n * self.dim());
        for _ in 0..self.n {
            vals.extend(crate::gp::likelihood::draw_correlated(&l, Some(theta), &mut rng));
        }
        GaussianSample::new(Matrix::from_row_major(self.n, self.dim(), vals)?)
    }

    fn analytic_p(&self, _theta: &[f64]) -> Result<SpdMatrix<f64>> {
        let m = self.precision.to_dense();
        let mvm = m.matmul(&self.truth_cov.to_dense())?.matmul(&m)?;
        SpdMatrix::new(crate::linalg::SymMatrix::from_dense(&mvm.scaled(self.n as f64))?)
    }

    fn analytic_q(&self, _theta: &[f64]) -> Result<SpdMatrix<f64>> {
        self.precision.scaled(self.n as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::numerical_gradient;
    use crate::sandwich::{p_bootstrap, p_moment, q_from_hessian};

    fn cov() -> SpdMatrix<f64> {
        SpdMatrix::from_rows(&[vec![1.0, 0.3], vec![0.3, 2.0]]).unwrap()
    }

    #[test]
    fn objective_matches_direct_sum_and_gradient() {
        let m = GaussianMeanModel::exact(cov(), 20).unwrap();
        let d = m.simulate(&[0.5, -1.0], 3).unwrap();
        let theta = [0.2, -0.7];
        let prec = m.precision.to_dense();
        let direct: f64 = (0..20)
            .map(|r| {
                let e: Vec<f64> = d.values.row(r).iter().zip(&theta).map(|(y, t)| y - t).collect();
                -0.5 * crate::linalg::dot(&e, &prec.matvec(&e).unwrap())
            })
            .sum();
        assert!((m.log_objective(&theta, &d).unwrap() - direct).abs() < 1e-10);
        let g = m.gradient(&theta, &d).unwrap();
        let fd = numerical_gradient(|t| m.log_objective(t, &d), &theta, None).unwrap();
        for k in 0..2 {
            assert!((g[k] - fd[k]).abs() < 1e-6 * (1.0 + g[k].abs()));
        }
    }

    #[test]
    fn information_identity_for_exact_likelihood() {
        let m = GaussianMeanModel::exact(cov(), 50).unwrap();
        let p = m.analytic_p(&[0.0, 0.0]).unwrap();
        let q = m.analytic_q(&[0.0, 0.0]).unwrap();
        assert!(p.as_sym().max_abs_diff(q.as_sym()) < 1e-10);
        let boot = p_bootstrap(&m, &[0.0, 0.0], 500, 4).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let rel = (boot.get(i, j) - q.get(i, j)).abs() / q.get(i, i).max(q.get(j, j));
                assert!(rel < 0.15, "{boot:?} vs {q:?}");
            }
        }
        let d = m.simulate(&[0.0, 0.0], 9).unwrap();
        let h = q_from_hessian(&m, None, &d, &[0.1, 0.1]).unwrap();
        assert!(h.as_sym().max_abs_diff(q.as_sym()) < 1e-4 * q.get(0, 0));
    }

    #[test]
    fn moment_estimator_for_scalar_mean() {
        // iid N(μ, σ²) at the true μ: P̂ ≈ n/σ².
        let s2 = 2.5;
        let m = GaussianMeanModel::exact(SpdMatrix::from_diagonal(&[s2]).unwrap(), 4000).unwrap();
        let d = m.simulate(&[1.0], 8).unwrap();
        let p = p_moment(&m, &d, &[1.0]).unwrap();
        let want = 4000.0 / s2;
        // Relative sd of a mean of χ²₁ variables is √(2/n) ≈ 0.022.
        assert!((p.get(0, 0) / want - 1.0).abs() < 0.1, "{} vs {want}", p.get(0, 0));
    }

    #[test]
    fn misspecified_sandwich() {
        let w = SpdMatrix::from_diagonal(&[1.0, 1.0]).unwrap();
        let m = GaussianMeanModel::misspecified(cov(), w, 10).unwrap();
        let p = m.analytic_p(&[0.0; 2]).unwrap();
        assert!((p.get(1, 1) - 20.0).abs() < 1e-12 && (p.get(0, 1) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn csv_roundtrip() {
        let m = GaussianMeanModel::exact(cov(), 4).unwrap();
        let d = m.simulate(&[0.0, 0.0], 1).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert_eq!(GaussianSample::read_csv(buf.as_slice()).unwrap(), d);
    }
}
