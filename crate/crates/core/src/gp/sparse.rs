//! Symmetric sparse storage and a banded Cholesky backend.
//!
//! Tapered covariance matrices on planar designs are banded after a reverse
//! Cuthill-McKee reordering, so the factor is stored as a dense band. Entries of the
//! inverse inside the band come from the Takahashi recurrence, which needs only the
//! factor and costs O(n b²).

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;

/// Symmetric matrix in compressed-row form holding both triangles.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymMatrix<T> {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> SparseSymMatrix<T> {
    /// Builds from lower-triangle triplets `(i, j, v)` with `i >= j`. Every diagonal
    /// entry must be present; duplicates are rejected.
    pub fn from_lower_triplets(dim: usize, triplets: &[(usize, usize, T)]) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, T)>> = vec![Vec::new(); dim];
        for &(i, j, v) in triplets {
            if i >= dim || j > i {
                return Err(Error::InvalidArgument(format!(
                    "triplet ({i}, {j}) outside the lower triangle of a {dim}x{dim} matrix"
                )));
            }
            rows[i].push((j, v));
            if i != j {
                rows[j].push((i, v));
            }
        }
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for (i, row) in rows.iter_mut().enumerate() {
            row.sort_by_key(|&(j, _)| j);
            if row.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::InvalidArgument(format!("duplicate entry in row {i}")));
            }
            if row.binary_search_by_key(&i, |&(j, _)| j).is_err() {
                return Err(Error::InvalidArgument(format!("missing diagonal entry {i}")));
            }
            for &(j, v) in row.iter() {
                col_idx.push(j);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            dim,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Stored entries, counting both triangles.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn fill_fraction(&self) -> f64 {
        self.nnz() as f64 / (self.dim as f64 * self.dim as f64)
    }

    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => T::zero(),
        }
    }

    pub fn to_dense(&self) -> Matrix<T> {
        let mut m = Matrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        (0..self.dim)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum()
            })
            .collect()
    }

    pub fn symbolic(&self) -> BandOrdering {
        let adjacency: Vec<Vec<usize>> = (0..self.dim).map(|i| self.row(i).0.to_vec()).collect();
        BandOrdering::from_adjacency(&adjacency)
    }
}

/// Symmetric permutation chosen to minimize the half-bandwidth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BandOrdering {
    /// `perm[new] = old`
    perm: Vec<usize>,
    /// `inverse[old] = new`
    inverse: Vec<usize>,
    bandwidth: usize,
}

impl BandOrdering {
    /// Picks the better of the natural and reverse Cuthill-McKee orderings.
    pub fn from_adjacency(adjacency: &[Vec<usize>]) -> Self {
        let n = adjacency.len();
        let natural: Vec<usize> = (0..n).collect();
        let rcm = reverse_cuthill_mckee(adjacency);
        let bw_nat = bandwidth_of(adjacency, &natural);
        let bw_rcm = bandwidth_of(adjacency, &rcm);
        let perm = if bw_rcm < bw_nat { rcm } else { natural };
        Self::from_perm(adjacency, perm)
    }

    fn from_perm(adjacency: &[Vec<usize>], perm: Vec<usize>) -> Self {
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let bandwidth = bandwidth_of(adjacency, &perm);
        Self {
            perm,
            inverse,
            bandwidth,
        }
    }

    pub fn identity(n: usize, bandwidth: usize) -> Self {
        Self {
            perm: (0..n).collect(),
            inverse: (0..n).collect(),
            bandwidth: bandwidth.min(n.saturating_sub(1)),
        }
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    #[inline]
    pub fn new_index(&self, old: usize) -> usize {
        self.inverse[old]
    }

    #[inline]
    pub fn old_index(&self, new: usize) -> usize {
        self.perm[new]
    }
}

fn bandwidth_of(adjacency: &[Vec<usize>], perm: &[usize]) -> usize {
    let mut inverse = vec![0; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inverse[old] = new;
    }
    let mut bw = 0;
    for (i, nbrs) in adjacency.iter().enumerate() {
        for &j in nbrs {
            bw = bw.max(inverse[i].abs_diff(inverse[j]));
        }
    }
    bw
}

fn reverse_cuthill_mckee(adjacency: &[Vec<usize>]) -> Vec<usize> {
    let n = adjacency.len();
    let degree: Vec<usize> = adjacency.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let seed = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| degree[i])
            .unwrap_or(0);
        let start = pseudo_peripheral(adjacency, seed, &visited);
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = adjacency[v]
                .iter()
                .copied()
                .filter(|&w| !visited[w])
                .collect();
            nbrs.sort_by_key(|&w| (degree[w], w));
            for w in nbrs {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// Endpoint of a long BFS path, found by repeated eccentricity sweeps.
fn pseudo_peripheral(adjacency: &[Vec<usize>], start: usize, blocked: &[bool]) -> usize {
    let mut current = start;
    let mut best_depth = 0;
    for _ in 0..8 {
        let levels = bfs_levels(adjacency, current, blocked);
        let depth = levels.iter().flatten().copied().max().unwrap_or(0);
        if depth <= best_depth && current != start {
            break;
        }
        best_depth = depth;
        let far = levels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.filter(|&d| d == depth).map(|_| i))
            .min_by_key(|&i| adjacency[i].len());
        match far {
            Some(f) if f != current => current = f,
            _ => break,
        }
    }
    current
}

fn bfs_levels(adjacency: &[Vec<usize>], start: usize, blocked: &[bool]) -> Vec<Option<usize>> {
    let mut level = vec![None; adjacency.len()];
    level[start] = Some(0);
    let mut queue = VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        let d = level[v].unwrap_or(0);
        for &w in &adjacency[v] {
            if !blocked[w] && level[w].is_none() {
                level[w] = Some(d + 1);
                queue.push_back(w);
            }
        }
    }
    level
}

/// Cholesky factor A = L L' of a permuted symmetric band matrix.
///
/// Row `i` of L is stored as the `b + 1` entries for columns `i - b ..= i`; columns
/// before 0 are zero padding.
#[derive(Debug, Clone)]
pub struct BandCholesky<T> {
    n: usize,
    b: usize,
    l: Vec<T>,
}

impl<T: Real> BandCholesky<T> {
    /// Factors the band matrix whose lower band (same layout as the factor) is `a`.
    pub fn factor(n: usize, b: usize, mut a: Vec<T>) -> Result<Self> {
        let w = b + 1;
        if a.len() != n * w {
            return Err(Error::DimensionMismatch {
                expected: n * w,
                found: a.len(),
            });
        }
        for i in 0..n {
            let lo = i.saturating_sub(b);
            let row_i = i * w + b - i;
            for j in lo..=i {
                let row_j = j * w + b - j;
                let mut s = a[row_i + j];
                let (ri, rj) = (&a[row_i + lo..row_i + j], &a[row_j + lo..row_j + j]);
                for (x, y) in ri.iter().zip(rj) {
                    s -= *x * *y;
                }
                if j < i {
                    a[row_i + j] = s / a[row_j + j];
                } else {
                    if !(s > T::zero()) || !s.is_finite() {
                        return Err(Error::Cholesky {
                            pivot: i,
                            value: s.to_f64_lossy(),
                        });
                    }
                    a[row_i + i] = s.sqrt();
                }
            }
        }
        Ok(Self { n, b, l: a })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.b
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> T {
        self.l[i * (self.b + 1) + self.b + j - i]
    }

    pub fn log_det(&self) -> T {
        let two = T::of(2.0);
        (0..self.n).map(|i| two * self.at(i, i).ln()).sum()
    }

    /// Solves A x = r in place (permuted indexing).
    pub fn solve_in_place(&self, x: &mut [T]) {
        let (n, b, w) = (self.n, self.b, self.b + 1);
        for i in 0..n {
            let lo = i.saturating_sub(b);
            let row = &self.l[i * w + b - i + lo..i * w + b];
            let s: T = row.iter().zip(&x[lo..i]).map(|(a, y)| *a * *y).sum();
            x[i] = (x[i] - s) / self.at(i, i);
        }
        for i in (0..n).rev() {
            let hi = (i + b).min(n - 1);
            let mut s = x[i];
            for k in i + 1..=hi {
                s -= self.at(k, i) * x[k];
            }
            x[i] = s / self.at(i, i);
        }
    }

    /// Entries of A⁻¹ within the band, via the Takahashi recurrence.
    pub fn band_inverse(&self) -> BandInverse<T> {
        let (n, b) = (self.n, self.b);
        let zw = 2 * b + 1;
        let mut z = vec![T::zero(); n * zw];
        let mut v = vec![T::zero(); b];
        for j in (0..n).rev() {
            let m = (j + b).min(n - 1) - j;
            for t in 0..m {
                v[t] = self.at(j + 1 + t, j);
            }
            let ljj = self.at(j, j);
            for i in (j + 1..=j + m).rev() {
                let start = i * zw + b + j + 1 - i;
                let s: T = v[..m].iter().zip(&z[start..start + m]).map(|(a, c)| *a * *c).sum();
                let zij = -s / ljj;
                z[i * zw + b + j - i] = zij;
                z[j * zw + b + i - j] = zij;
            }
            let start = j * zw + b + 1;
            let s: T = v[..m].iter().zip(&z[start..start + m]).map(|(a, c)| *a * *c).sum();
            z[j * zw + b] = (T::one() / ljj - s) / ljj;
        }
        BandInverse { n, b, z }
    }
}

/// Entries (A⁻¹)ᵢⱼ for |i − j| ≤ b, in permuted indexing.
#[derive(Debug, Clone)]
pub struct BandInverse<T> {
    n: usize,
    b: usize,
    z: Vec<T>,
}

impl<T: Real> BandInverse<T> {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        debug_assert!(i.abs_diff(j) <= self.b && i < self.n && j < self.n);
        self.z[i * (2 * self.b + 1) + self.b + j - i]
    }

    pub fn dim(&self) -> usize {
        self.n
    }
}

/// Sparse factorization of a symmetric matrix: ordering plus band Cholesky.
#[derive(Debug, Clone)]
pub struct SparseCholesky<T> {
    ordering: BandOrdering,
    factor: BandCholesky<T>,
}

impl<T: Real> SparseCholesky<T> {
    pub fn new(a: &SparseSymMatrix<T>, ordering: &BandOrdering) -> Result<Self> {
        let n = a.dim();
        if ordering.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: ordering.dim(),
            });
        }
        let b = ordering.bandwidth();
        let w = b + 1;
        let mut band = vec![T::zero(); n * w];
        for i in 0..n {
            let pi = ordering.new_index(i);
            let (cols, vals) = a.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let pj = ordering.new_index(j);
                if pj <= pi {
                    if pi - pj > b {
                        return Err(Error::InvalidArgument(
                            "ordering bandwidth too small for matrix pattern".into(),
                        ));
                    }
                    band[pi * w + b + pj - pi] = v;
                }
            }
        }
        Ok(Self {
            ordering: ordering.clone(),
            factor: BandCholesky::factor(n, b, band)?,
        })
    }

    pub fn from_parts(ordering: BandOrdering, factor: BandCholesky<T>) -> Self {
        Self { ordering, factor }
    }

    pub fn ordering(&self) -> &BandOrdering {
        &self.ordering
    }

    pub fn factor(&self) -> &BandCholesky<T> {
        &self.factor
    }

    pub fn log_det(&self) -> T {
        self.factor.log_det()
    }

    /// Solves A x = r in original indexing.
    pub fn solve(&self, r: &[T]) -> Vec<T> {
        let n = self.ordering.dim();
        let mut x: Vec<T> = (0..n).map(|k| r[self.ordering.old_index(k)]).collect();
        self.factor.solve_in_place(&mut x);
        let mut out = vec![T::zero(); n];
        for (k, v) in x.into_iter().enumerate() {
            out[self.ordering.old_index(k)] = v;
        }
        out
    }

    /// Dense A⁻¹ by column solves, for the score and plug-in information.
    pub fn dense_inverse(&self) -> Matrix<T> {
        let n = self.ordering.dim();
        let mut inv = Matrix::zeros(n, n);
        let mut col = vec![T::zero(); n];
        for j in 0..n {
            col.iter_mut().for_each(|c| *c = T::zero());
            col[self.ordering.new_index(j)] = T::one();
            self.factor.solve_in_place(&mut col);
            for (k, &v) in col.iter().enumerate() {
                inv[(self.ordering.old_index(k), j)] = v;
            }
        }
        inv
    }

    /// A⁻¹ entries on the band, read through original indices.
    pub fn restricted_inverse(&self) -> RestrictedInverse<'_, T> {
        RestrictedInverse {
            ordering: &self.ordering,
            band: self.factor.band_inverse(),
        }
    }
}

pub struct RestrictedInverse<'a, T> {
    ordering: &'a BandOrdering,
    band: BandInverse<T>,
}

impl<T: Real> RestrictedInverse<'_, T> {
    /// (A⁻¹)ᵢⱼ for any (i, j) in the pattern of A.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.band
            .get(self.ordering.new_index(i), self.ordering.new_index(j))
    }
}
