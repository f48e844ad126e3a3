//! Dense matrices, symmetric storage, and positive-definite certification.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_diagonal(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::DimensionMismatch {
                    expected: c,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: r,
            cols: c,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                found: other.rows,
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == T::zero() {
                    continue;
                }
                let other_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(other_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[T]) -> Result<Vec<T>> {
        if self.cols != v.len() {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                found: v.len(),
            });
        }
        Ok((0..self.rows)
            .map(|i| dot(self.row(i), v))
            .collect())
    }

    pub fn scaled(&self, c: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * c).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                expected: self.rows * self.cols,
                found: other.rows * other.cols,
            });
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn is_identity(&self) -> bool {
        self.is_square()
            && (0..self.rows).all(|i| {
                (0..self.cols).all(|j| self[(i, j)] == if i == j { T::one() } else { T::zero() })
            })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Inverse of a general square matrix by Gauss-Jordan elimination with partial pivoting.
    pub fn inverse(&self) -> Result<Self> {
        if !self.is_square() {
            return Err(Error::DimensionMismatch {
                expected: self.rows,
                found: self.cols,
            });
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        let scale = self.max_abs();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| {
                    a[(i, col)]
                        .abs()
                        .partial_cmp(&a[(j, col)].abs())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .unwrap_or(col);
            let pv = a[(pivot, col)];
            if pv.abs() <= scale * T::epsilon() * T::of_usize(n) || !pv.is_finite() {
                return Err(Error::IllConditioned {
                    condition: f64::INFINITY,
                });
            }
            if pivot != col {
                for j in 0..n {
                    a.data.swap(pivot * n + j, col * n + j);
                    inv.data.swap(pivot * n + j, col * n + j);
                }
            }
            let inv_pv = T::one() / pv;
            for j in 0..n {
                a[(col, j)] *= inv_pv;
                inv[(col, j)] *= inv_pv;
            }
            for i in 0..n {
                if i == col {
                    continue;
                }
                let f = a[(i, col)];
                if f == T::zero() {
                    continue;
                }
                for j in 0..n {
                    let ac = a[(col, j)];
                    let ic = inv[(col, j)];
                    a[(i, j)] -= f * ac;
                    inv[(i, j)] -= f * ic;
                }
            }
        }
        Ok(inv)
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| U::of(x.to_f64_lossy())).collect(),
        }
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

impl<T: Real> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl<T: Real + Serialize> Serialize for Matrix<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de, T: Real + Deserialize<'de>> Deserialize<'de> for Matrix<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<T>>::deserialize(d)?;
        Matrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Symmetric matrix stored as its packed lower triangle, so A_ij == A_ji holds exactly.
#[derive(Clone, PartialEq)]
pub struct SymMatrix<T> {
    dim: usize,
    packed: Vec<T>,
}

#[inline]
fn packed_index(i: usize, j: usize) -> usize {
    let (r, c) = if i >= j { (i, j) } else { (j, i) };
    r * (r + 1) / 2 + c
}

impl<T: Real> SymMatrix<T> {
    pub fn zeros(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Empty("symmetric matrix dimension"));
        }
        Ok(Self {
            dim,
            packed: vec![T::zero(); dim * (dim + 1) / 2],
        })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        let mut m = Self::zeros(dim)?;
        for i in 0..dim {
            m.set(i, i, T::one());
        }
        Ok(m)
    }

    pub fn from_diagonal(diag: &[T]) -> Result<Self> {
        let mut m = Self::zeros(diag.len())?;
        for (i, &d) in diag.iter().enumerate() {
            m.set(i, i, d);
        }
        Ok(m)
    }

    /// Builds from the lower triangle of `f(i, j)`, `i >= j`.
    pub fn from_lower_fn(dim: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let mut m = Self::zeros(dim)?;
        for i in 0..dim {
            for j in 0..=i {
                m.packed[packed_index(i, j)] = f(i, j);
            }
        }
        Ok(m)
    }

    /// Symmetrizes a square matrix as (A + A')/2.
    pub fn from_dense(a: &Matrix<T>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch {
                expected: a.rows(),
                found: a.cols(),
            });
        }
        let half = T::of(0.5);
        Self::from_lower_fn(a.rows(), |i, j| {
            if i == j {
                a[(i, i)]
            } else {
                half * (a[(i, j)] + a[(j, i)])
            }
        })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        Self::from_dense(&Matrix::from_rows(rows)?)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.packed[packed_index(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.packed[packed_index(i, j)] = v;
    }

    pub fn to_dense(&self) -> Matrix<T> {
        Matrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j))
    }

    pub fn scaled(&self, c: T) -> Self {
        Self {
            dim: self.dim,
            packed: self.packed.iter().map(|&x| x * c).collect(),
        }
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.packed
            .iter()
            .zip(&other.packed)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn frobenius_norm(&self) -> T {
        self.to_dense().frobenius_norm()
    }

    /// Conjugation U A U'.
    pub fn conjugate(&self, u: &Matrix<T>) -> Result<Self> {
        let ua = u.matmul(&self.to_dense())?;
        Self::from_dense(&ua.matmul(&u.transpose())?)
    }

    pub fn eigen(&self) -> SymEigen<T> {
        jacobi_eigen(self)
    }

    /// Zeroes rows and columns of `coords` except their diagonal entries.
    pub fn decouple(&self, coords: &[usize]) -> Self {
        let mut out = self.clone();
        for &c in coords {
            for j in 0..self.dim {
                if j != c {
                    out.set(c, j, T::zero());
                }
            }
        }
        out
    }
}

impl<T: Real> fmt::Debug for SymMatrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Sym{:?}", self.to_dense())
    }
}

impl<T: Real + Serialize> Serialize for SymMatrix<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_dense().serialize(s)
    }
}

impl<'de, T: Real + Deserialize<'de>> Deserialize<'de> for SymMatrix<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = Matrix::<T>::deserialize(d)?;
        let sym = SymMatrix::from_dense(&m).map_err(serde::de::Error::custom)?;
        let asym = m.max_abs_diff(&sym.to_dense());
        if asym > T::of(1e-9) * (T::one() + m.max_abs()) {
            return Err(serde::de::Error::custom("matrix is not symmetric"));
        }
        Ok(sym)
    }
}

/// Eigen-decomposition A = V diag(values) V' with eigenvectors in the columns of `vectors`.
#[derive(Clone)]
pub struct SymEigen<T> {
    pub values: Vec<T>,
    pub vectors: Matrix<T>,
}

impl<T: Real> fmt::Debug for SymEigen<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SymEigen")
            .field("values", &self.values)
            .field("vectors", &self.vectors)
            .finish()
    }
}

impl<T: Real> SymEigen<T> {
    /// V diag(f(values)) V'.
    pub fn map_values(&self, f: impl Fn(T) -> T) -> Result<SymMatrix<T>> {
        let n = self.values.len();
        let mapped: Vec<T> = self.values.iter().map(|&v| f(v)).collect();
        SymMatrix::from_lower_fn(n, |i, j| {
            (0..n)
                .map(|k| self.vectors[(i, k)] * mapped[k] * self.vectors[(j, k)])
                .sum()
        })
    }

    pub fn min_value(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max_value(&self) -> T {
        self.values.iter().copied().fold(T::neg_infinity(), T::max)
    }
}

/// Cyclic Jacobi eigenvalue iteration; accurate to working precision for symmetric input.
pub fn jacobi_eigen<T: Real>(a: &SymMatrix<T>) -> SymEigen<T> {
    let n = a.dim();
    let mut m = a.to_dense();
    let mut v = Matrix::identity(n);
    let two = T::of(2.0);
    for _sweep in 0..100 {
        let mut off = T::zero();
        let mut total = T::zero();
        for i in 0..n {
            for j in 0..n {
                let x = m[(i, j)] * m[(i, j)];
                total += x;
                if i != j {
                    off += x;
                }
            }
        }
        if off == T::zero() || off <= total * T::epsilon() * T::epsilon() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (two * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    SymEigen {
        values: (0..n).map(|i| m[(i, i)]).collect(),
        vectors: v,
    }
}

/// A symmetric matrix certified positive definite, with its eigen-decomposition cached.
#[derive(Clone)]
pub struct SpdMatrix<T> {
    matrix: SymMatrix<T>,
    eigen: SymEigen<T>,
}

impl<T: Real> SpdMatrix<T> {
    /// Certifies `a`: every eigenvalue must exceed `pd_tolerance() * largest`.
    pub fn new(a: SymMatrix<T>) -> Result<Self> {
        let eigen = jacobi_eigen(&a);
        let largest = eigen.max_value();
        let smallest = eigen.min_value();
        if !(largest > T::zero()) || !(smallest > T::pd_tolerance() * largest) {
            return Err(Error::NotPositiveDefinite {
                eigenvalue: smallest.to_f64_lossy(),
                largest: largest.to_f64_lossy(),
            });
        }
        Ok(Self { matrix: a, eigen })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        Self::new(SymMatrix::from_rows(rows)?)
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::new(SymMatrix::identity(dim)?)
    }

    pub fn from_diagonal(diag: &[T]) -> Result<Self> {
        Self::new(SymMatrix::from_diagonal(diag)?)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn as_sym(&self) -> &SymMatrix<T> {
        &self.matrix
    }

    pub fn into_sym(self) -> SymMatrix<T> {
        self.matrix
    }

    pub fn to_dense(&self) -> Matrix<T> {
        self.matrix.to_dense()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.matrix.get(i, j)
    }

    pub fn eigen(&self) -> &SymEigen<T> {
        &self.eigen
    }

    pub fn condition_number(&self) -> T {
        self.eigen.max_value() / self.eigen.min_value()
    }

    pub fn scaled(&self, c: T) -> Result<Self> {
        Self::new(self.matrix.scaled(c))
    }

    pub fn cholesky(&self) -> Result<Matrix<T>> {
        cholesky(&self.to_dense())
    }
}

impl<T: Real> PartialEq for SpdMatrix<T> {
    fn eq(&self, other: &Self) -> bool {
        self.matrix == other.matrix
    }
}

impl<T: Real> fmt::Debug for SpdMatrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Spd{:?}", self.to_dense())
    }
}

impl<T: Real + Serialize> Serialize for SpdMatrix<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.matrix.serialize(s)
    }
}

impl<'de, T: Real + Deserialize<'de>> Deserialize<'de> for SpdMatrix<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let sym = SymMatrix::<T>::deserialize(d)?;
        SpdMatrix::new(sym).map_err(serde::de::Error::custom)
    }
}

/// Symmetric square root O D^{1/2} O' from the eigen-decomposition A = O D O'.
pub fn spd_sqrt<T: Real>(a: &SpdMatrix<T>) -> Result<SpdMatrix<T>> {
    let root = a.eigen().map_values(|v| v.sqrt())?;
    let eigen = SymEigen {
        values: a.eigen().values.iter().map(|v| v.sqrt()).collect(),
        vectors: a.eigen().vectors.clone(),
    };
    Ok(SpdMatrix { matrix: root, eigen })
}

/// Largest condition number `spd_inverse` accepts.
pub const MAX_INVERSE_CONDITION: f64 = 1e10;

pub fn spd_inverse<T: Real>(a: &SpdMatrix<T>) -> Result<SpdMatrix<T>> {
    let cond = a.condition_number();
    if !(cond.to_f64_lossy() <= MAX_INVERSE_CONDITION) {
        return Err(Error::IllConditioned {
            condition: cond.to_f64_lossy(),
        });
    }
    let inv = a.eigen().map_values(|v| T::one() / v)?;
    let eigen = SymEigen {
        values: a.eigen().values.iter().map(|&v| T::one() / v).collect(),
        vectors: a.eigen().vectors.clone(),
    };
    Ok(SpdMatrix { matrix: inv, eigen })
}

/// Lower Cholesky factor of a dense symmetric positive definite matrix.
pub fn cholesky<T: Real>(a: &Matrix<T>) -> Result<Matrix<T>> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            expected: a.rows(),
            found: a.cols(),
        });
    }
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        {
            let lj = l.row(j);
            d -= dot(&lj[..j], &lj[..j]);
        }
        if !(d > T::zero()) || !d.is_finite() {
            return Err(Error::Cholesky {
                pivot: j,
                value: d.to_f64_lossy(),
            });
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let s = {
                let (li, lj) = (l.row(i), l.row(j));
                a[(i, j)] - dot(&li[..j], &lj[..j])
            };
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Solves L x = b for lower-triangular L.
pub fn forward_substitute<T: Real>(l: &Matrix<T>, b: &[T]) -> Vec<T> {
    let n = l.rows();
    let mut x = b.to_vec();
    for i in 0..n {
        let s = dot(&l.row(i)[..i], &x[..i]);
        x[i] = (x[i] - s) / l[(i, i)];
    }
    x
}

/// Solves L' x = b for lower-triangular L.
pub fn backward_substitute<T: Real>(l: &Matrix<T>, b: &[T]) -> Vec<T> {
    let n = l.rows();
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solves A x = b given the lower Cholesky factor of A.
pub fn cholesky_solve<T: Real>(l: &Matrix<T>, b: &[T]) -> Vec<T> {
    backward_substitute(l, &forward_substitute(l, b))
}

/// Inverse of A from its lower Cholesky factor.
pub fn cholesky_inverse<T: Real>(l: &Matrix<T>) -> Matrix<T> {
    let n = l.rows();
    let mut inv = Matrix::zeros(n, n);
    let mut e = vec![T::zero(); n];
    for j in 0..n {
        e.iter_mut().for_each(|x| *x = T::zero());
        e[j] = T::one();
        let col = cholesky_solve(l, &e);
        for i in 0..n {
            inv[(i, j)] = col[i];
        }
    }
    inv
}
