//! Full and tapered Gaussian log-likelihoods, scores and plug-in information.

use rand_distr::{Distribution, StandardNormal};

use super::covariance::CovarianceFamily;
use super::sparse::{BandCholesky, BandOrdering, SparseCholesky, SparseSymMatrix};
use super::taper::{Locations, TaperSpec};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_inverse, forward_substitute, Matrix, SpdMatrix, SymMatrix};
use crate::scalar::Real;
use crate::seed::rng_from_seed;

/// A stored (lower-triangle) pair of the taper pattern with its lags.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternEntry<T> {
    pub i: usize,
    pub j: usize,
    pub h: T,
    pub u: T,
    pub taper: T,
}

impl<T> PatternEntry<T> {
    #[inline]
    fn is_diagonal(&self) -> bool {
        self.i == self.j
    }
}

/// Locations, taper, and the cached sparsity pattern and ordering they imply.
#[derive(Debug, Clone)]
pub struct TaperedDesign<T> {
    locations: Locations<T>,
    taper: TaperSpec<T>,
    entries: Vec<PatternEntry<T>>,
    /// Indices into `entries` touching each row, both triangles.
    rows: Vec<Vec<usize>>,
    ordering: BandOrdering,
}

impl<T: Real> TaperedDesign<T> {
    pub fn new(locations: Locations<T>, taper: TaperSpec<T>) -> Result<Self> {
        taper.validate()?;
        let n = locations.len();
        let mut entries = Vec::new();
        let mut rows = vec![Vec::new(); n];
        let mut adjacency = vec![Vec::new(); n];
        for i in 0..n {
            for j in 0..=i {
                let h = locations.distance(i, j);
                let u = locations.time_lag(i, j);
                if i == j || taper.within(h, u) {
                    let t = taper.value(h, u);
                    if i != j && t == T::zero() {
                        continue;
                    }
                    let k = entries.len();
                    entries.push(PatternEntry {
                        i,
                        j,
                        h,
                        u,
                        taper: t,
                    });
                    rows[i].push(k);
                    adjacency[i].push(j);
                    if i != j {
                        rows[j].push(k);
                        adjacency[j].push(i);
                    }
                }
            }
        }
        let ordering = BandOrdering::from_adjacency(&adjacency);
        Ok(Self {
            locations,
            taper,
            entries,
            rows,
            ordering,
        })
    }

    pub fn n(&self) -> usize {
        self.locations.len()
    }

    pub fn locations(&self) -> &Locations<T> {
        &self.locations
    }

    pub fn taper(&self) -> &TaperSpec<T> {
        &self.taper
    }

    pub fn entries(&self) -> &[PatternEntry<T>] {
        &self.entries
    }

    pub fn bandwidth(&self) -> usize {
        self.ordering.bandwidth()
    }

    /// Stored entries of the tapered matrix, counting both triangles.
    pub fn nnz(&self) -> usize {
        2 * self.entries.len() - self.n()
    }

    pub fn fill_fraction(&self) -> f64 {
        self.nnz() as f64 / (self.n() as f64).powi(2)
    }

    /// Σ ∘ T on the taper pattern.
    pub fn tapered_matrix(&self, family: &CovarianceFamily<T>) -> Result<SparseSymMatrix<T>> {
        family.validate()?;
        let trip: Vec<(usize, usize, T)> = self
            .entries
            .iter()
            .map(|e| (e.i, e.j, family.entry(e.h, e.u, e.is_diagonal()) * e.taper))
            .collect();
        SparseSymMatrix::from_lower_triplets(self.n(), &trip)
    }

    /// Sparse Cholesky of Σ ∘ T, filling the band directly.
    pub fn factor(&self, family: &CovarianceFamily<T>) -> Result<SparseCholesky<T>> {
        let (n, b) = (self.n(), self.ordering.bandwidth());
        let w = b + 1;
        let mut band = vec![T::zero(); n * w];
        for e in &self.entries {
            let v = family.entry(e.h, e.u, e.is_diagonal()) * e.taper;
            let (pi, pj) = (self.ordering.new_index(e.i), self.ordering.new_index(e.j));
            let (hi, lo) = if pi >= pj { (pi, pj) } else { (pj, pi) };
            band[hi * w + b + lo - hi] = v;
        }
        let factor = BandCholesky::factor(n, b, band)?;
        Ok(SparseCholesky::from_parts(self.ordering.clone(), factor))
    }

    fn check_len(&self, y: &[T]) -> Result<()> {
        if y.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                found: y.len(),
            });
        }
        Ok(())
    }

    /// Tapered log-likelihood of the (mean-removed) observations `y`.
    pub fn loglik(&self, family: &CovarianceFamily<T>, y: &[T]) -> Result<T> {
        self.check_len(y)?;
        family.validate()?;
        let chol = self.factor(family)?;
        let z = chol.restricted_inverse();
        let mut quad = T::zero();
        let two = T::of(2.0);
        for e in &self.entries {
            let term = e.taper * z.get(e.i, e.j) * y[e.i] * y[e.j];
            quad += if e.is_diagonal() { term } else { two * term };
        }
        Ok(gaussian_constant::<T>(self.n()) - T::of(0.5) * (chol.log_det() + quad))
    }

    /// Analytic gradient of [`Self::loglik`] with respect to the free parameters.
    pub fn score(&self, family: &CovarianceFamily<T>, y: &[T]) -> Result<Vec<T>> {
        self.check_len(y)?;
        family.validate()?;
        let n = self.n();
        let p = family.n_params();
        let chol = self.factor(family)?;
        let z = chol.dense_inverse();

        // U = W Z with W = T ∘ yy' on the pattern.
        let mut u = Matrix::zeros(n, n);
        for a in 0..n {
            for &k in &self.rows[a] {
                let e = &self.entries[k];
                let b = if e.i == a { e.j } else { e.i };
                let wab = e.taper * y[a] * y[b];
                let zb = z.row(b);
                let ua = u.row_mut(a);
                for (x, &zv) in ua.iter_mut().zip(zb) {
                    *x += wab * zv;
                }
            }
        }
        // V = Z W Z = Z U; V_cd = Z_c · U_{:,d} = Z_c · (Uᵀ)_d.
        let ut = u.transpose();

        let mut grad = vec![T::zero(); p];
        let mut d = vec![T::zero(); p];
        let half = T::of(0.5);
        for e in &self.entries {
            family.gradient(e.h, e.u, e.is_diagonal(), &mut d);
            let mult = if e.is_diagonal() { T::one() } else { T::of(2.0) };
            let zab = z[(e.i, e.j)];
            let vab: T = z.row(e.i).iter().zip(ut.row(e.j)).map(|(a, b)| *a * *b).sum();
            for k in 0..p {
                let dab = d[k] * e.taper;
                grad[k] += mult * dab * half * (vab - zab);
            }
        }
        Ok(grad)
    }

    /// Tapered log-likelihood through dense matrices; reference for the sparse path.
    pub fn dense_loglik(&self, family: &CovarianceFamily<T>, y: &[T]) -> Result<T> {
        self.check_len(y)?;
        let (a, t) = self.dense_tapered(family)?;
        let l = cholesky(&a)?;
        let log_det: T = (0..self.n()).map(|i| T::of(2.0) * l[(i, i)].ln()).sum();
        let z = cholesky_inverse(&l);
        let mut quad = T::zero();
        for i in 0..self.n() {
            for j in 0..self.n() {
                quad += t[(i, j)] * z[(i, j)] * y[i] * y[j];
            }
        }
        Ok(gaussian_constant::<T>(self.n()) - T::of(0.5) * (log_det + quad))
    }

    /// Score through dense matrices: −½tr(A⁻¹∂A) + ½ y'((A⁻¹∂AA⁻¹)∘T)y.
    pub fn dense_score(&self, family: &CovarianceFamily<T>, y: &[T]) -> Result<Vec<T>> {
        self.check_len(y)?;
        let n = self.n();
        let p = family.n_params();
        let (a, t) = self.dense_tapered(family)?;
        let z = cholesky_inverse(&cholesky(&a)?);
        let mut grad = Vec::with_capacity(p);
        let mut d = vec![T::zero(); p];
        for k in 0..p {
            let da = Matrix::from_fn(n, n, |i, j| {
                let h = self.locations.distance(i, j);
                let u = self.locations.time_lag(i, j);
                family.gradient(h, u, i == j, &mut d);
                d[k] * t[(i, j)]
            });
            let zda = z.matmul(&da)?;
            let g = zda.matmul(&z)?;
            let mut quad = T::zero();
            for i in 0..n {
                for j in 0..n {
                    quad += g[(i, j)] * t[(i, j)] * y[i] * y[j];
                }
            }
            grad.push(T::of(0.5) * (quad - zda.trace()));
        }
        Ok(grad)
    }

    /// Dense Σ ∘ T and T.
    pub fn dense_tapered(&self, family: &CovarianceFamily<T>) -> Result<(Matrix<T>, Matrix<T>)> {
        family.validate()?;
        let n = self.n();
        let t = Matrix::from_fn(n, n, |i, j| {
            self.taper
                .value(self.locations.distance(i, j), self.locations.time_lag(i, j))
        });
        let sigma = covariance_matrix(family, &self.locations)?;
        let a = Matrix::from_fn(n, n, |i, j| sigma[(i, j)] * t[(i, j)]);
        Ok((a, t))
    }

    /// q(θ') = −½log|A(θ')| − ½tr(B(θ')Σ), the expected tapered log-likelihood when
    /// the data have covariance Σ, up to a constant.
    #[cfg(test)]
    fn expected_objective(&self, family: &CovarianceFamily<T>, sigma_entries: &[T]) -> Result<T> {
        let chol = self.factor(family)?;
        let z = chol.restricted_inverse();
        let mut tr = T::zero();
        let two = T::of(2.0);
        for (e, &s) in self.entries.iter().zip(sigma_entries) {
            let term = z.get(e.i, e.j) * e.taper * s;
            tr += if e.is_diagonal() { term } else { two * term };
        }
        Ok(-T::of(0.5) * (chol.log_det() + tr))
    }
}

impl TaperedDesign<f64> {
    /// X'WX and X'Wy with W = (Σ∘T)⁻¹∘T, the weight of the tapered quadratic form.
    /// The tapered likelihood of y − Xβ is Gaussian in β with precision X'WX.
    pub fn weighted_normal_equations(
        &self,
        family: &CovarianceFamily<f64>,
        x: &Matrix<f64>,
        y: &[f64],
    ) -> Result<(SymMatrix<f64>, Vec<f64>)> {
        self.check_len(y)?;
        if x.rows() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                found: x.rows(),
            });
        }
        let q = x.cols();
        let chol = self.factor(family)?;
        let z = chol.restricted_inverse();
        let mut xtwx = vec![0.0; q * q];
        let mut xtwy = vec![0.0; q];
        let mut add = |a: usize, b: usize, w: f64| {
            let (xa, xb) = (x.row(a), x.row(b));
            for k in 0..q {
                xtwy[k] += w * xa[k] * y[b];
                for l in 0..q {
                    xtwx[k * q + l] += w * xa[k] * xb[l];
                }
            }
        };
        for e in &self.entries {
            let w = e.taper * z.get(e.i, e.j);
            add(e.i, e.j, w);
            if !e.is_diagonal() {
                add(e.j, e.i, w);
            }
        }
        Ok((SymMatrix::from_lower_fn(q, |k, l| xtwx[k * q + l])?, xtwy))
    }

    /// Plug-in variability P(θ) and sensitivity Q(θ) of the tapered likelihood when
    /// the data come from `family`.
    ///
    /// P_ij = ½tr(MᵢΣMⱼΣ) with Mᵢ = −(A⁻¹∂ᵢA A⁻¹)∘T; Q is the negative Hessian of the
    /// expected objective, by central differences.
    pub fn analytic_pq(&self, family: &CovarianceFamily<f64>) -> Result<(SpdMatrix<f64>, SpdMatrix<f64>)> {
        let n = self.n();
        let p = family.n_params();
        let chol = self.factor(family)?;
        let z = chol.dense_inverse();
        let sigma = covariance_matrix(family, &self.locations)?;

        let mut d = vec![0.0; p];
        let mut dvals = vec![vec![0.0; self.entries.len()]; p];
        for (k, e) in self.entries.iter().enumerate() {
            family.gradient(e.h, e.u, e.is_diagonal(), &mut d);
            for i in 0..p {
                dvals[i][k] = d[i] * e.taper;
            }
        }

        let mut xs = Vec::with_capacity(p);
        let mut zds = Vec::with_capacity(p);
        for dv in &dvals {
            // Z D, one row at a time through the sparse rows of D.
            let mut zd = Matrix::zeros(n, n);
            for r in 0..n {
                let zr = z.row(r);
                let out = zd.row_mut(r);
                for (k, e) in self.entries.iter().enumerate() {
                    let v = dv[k];
                    out[e.j] += zr[e.i] * v;
                    if !e.is_diagonal() {
                        out[e.i] += zr[e.j] * v;
                    }
                }
            }
            // M = −(Z D Z) ∘ T on the pattern, then X = M Σ.
            let mut x = Matrix::zeros(n, n);
            for e in &self.entries {
                let g: f64 = zd.row(e.i).iter().zip(z.row(e.j)).map(|(a, b)| a * b).sum();
                let m = -g * e.taper;
                let (si, sj) = (sigma.row(e.j).to_vec(), sigma.row(e.i).to_vec());
                for (o, s) in x.row_mut(e.i).iter_mut().zip(&si) {
                    *o += m * s;
                }
                if !e.is_diagonal() {
                    for (o, s) in x.row_mut(e.j).iter_mut().zip(&sj) {
                        *o += m * s;
                    }
                }
            }
            xs.push(x);
            zds.push(zd);
        }
        let half_trace = |a: &[Matrix<f64>], i: usize, j: usize| {
            let bt = a[j].transpose();
            0.5 * a[i].as_slice().iter().zip(bt.as_slice()).map(|(x, y)| x * y).sum::<f64>()
        };
        let pm = SymMatrix::from_lower_fn(p, |i, j| half_trace(&xs, i, j))?;
        // The expected Hessian of the two-taper objective collapses to −½tr(Z Dᵢ Z Dⱼ).
        let qm = SymMatrix::from_lower_fn(p, |i, j| half_trace(&zds, i, j))?;
        let q = SpdMatrix::new(qm.clone()).map_err(|_| Error::IndefiniteHessian {
            eigenvalues: qm.eigen().values.clone(),
        })?;
        Ok((SpdMatrix::new(pm)?, q))
    }
}

/// −H certified positive definite, or an error listing its eigenvalues.
pub(crate) fn hessian_to_information(hess: &SymMatrix<f64>) -> Result<SpdMatrix<f64>> {
    let neg = hess.scaled(-1.0);
    SpdMatrix::new(neg.clone()).map_err(|_| Error::IndefiniteHessian {
        eigenvalues: neg.eigen().values,
    })
}

#[inline]
fn gaussian_constant<T: Real>(n: usize) -> T {
    -T::of(0.5) * T::of_usize(n) * (T::of(2.0) * T::PI()).ln()
}

/// Dense covariance matrix (with nugget) at the given locations.
pub fn covariance_matrix<T: Real>(family: &CovarianceFamily<T>, locs: &Locations<T>) -> Result<Matrix<T>> {
    family.validate()?;
    let n = locs.len();
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = family.entry(locs.distance(i, j), locs.time_lag(i, j), i == j);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

/// Sparse tapered covariance Σ ∘ T.
pub fn build_tapered_matrix<T: Real>(
    family: &CovarianceFamily<T>,
    taper: &TaperSpec<T>,
    locs: &Locations<T>,
) -> Result<SparseSymMatrix<T>> {
    TaperedDesign::new(locs.clone(), *taper)?.tapered_matrix(family)
}

/// Exact Gaussian log-likelihood of the mean-removed observations `y`.
pub fn full_gaussian_loglik<T: Real>(family: &CovarianceFamily<T>, locs: &Locations<T>, y: &[T]) -> Result<T> {
    if y.len() != locs.len() {
        return Err(Error::DimensionMismatch {
            expected: locs.len(),
            found: y.len(),
        });
    }
    let sigma = covariance_matrix(family, locs)?;
    let l = cholesky(&sigma)?;
    let log_det: T = (0..y.len()).map(|i| T::of(2.0) * l[(i, i)].ln()).sum();
    let w = forward_substitute(&l, y);
    let quad: T = w.iter().map(|&x| x * x).sum();
    Ok(gaussian_constant::<T>(y.len()) - T::of(0.5) * (log_det + quad))
}

/// Tapered log-likelihood of the mean-removed observations `y`. Builds the design on
/// each call; hold a [`TaperedDesign`] for repeated evaluation.
pub fn tapered_loglik<T: Real>(
    family: &CovarianceFamily<T>,
    taper: &TaperSpec<T>,
    locs: &Locations<T>,
    y: &[T],
) -> Result<T> {
    TaperedDesign::new(locs.clone(), *taper)?.loglik(family, y)
}

pub fn tapered_score<T: Real>(
    family: &CovarianceFamily<T>,
    taper: &TaperSpec<T>,
    locs: &Locations<T>,
    y: &[T],
) -> Result<Vec<T>> {
    TaperedDesign::new(locs.clone(), *taper)?.score(family, y)
}

#[allow(non_snake_case)]
pub fn analytic_PQ_tapered(
    family: &CovarianceFamily<f64>,
    taper: &TaperSpec<f64>,
    locs: &Locations<f64>,
) -> Result<(SpdMatrix<f64>, SpdMatrix<f64>)> {
    TaperedDesign::new(locs.clone(), *taper)?.analytic_pq(family)
}

/// Draws y = mean + L z with L the Cholesky factor of Σ.
pub fn simulate_field(
    family: &CovarianceFamily<f64>,
    locs: &Locations<f64>,
    mean: Option<&[f64]>,
    seed: u64,
) -> Result<Vec<f64>> {
    let l = cholesky(&covariance_matrix(family, locs)?)?;
    Ok(draw_correlated(&l, mean, &mut rng_from_seed(seed)))
}

pub(crate) fn draw_correlated(l: &Matrix<f64>, mean: Option<&[f64]>, rng: &mut crate::seed::Rng) -> Vec<f64> {
    let n = l.rows();
    let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    (0..n)
        .map(|i| {
            let s: f64 = l.row(i)[..=i].iter().zip(&z).map(|(a, b)| a * b).sum();
            s + mean.map_or(0.0, |m| m[i])
        })
        .collect()
}
