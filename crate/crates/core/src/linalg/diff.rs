//! Central finite differences.

use crate::error::{Error, Result};
use crate::linalg::dense::SymMatrix;
use crate::scalar::Real;

/// max(|x|, 1) * eps^{1/3}
pub fn gradient_steps<T: Real>(theta: &[T]) -> Vec<T> {
    let base = T::epsilon().cbrt();
    theta.iter().map(|x| x.abs().max(T::one()) * base).collect()
}

/// max(|x|, 1) * eps^{1/4}
pub fn hessian_steps<T: Real>(theta: &[T]) -> Vec<T> {
    let base = T::epsilon().sqrt().sqrt();
    theta.iter().map(|x| x.abs().max(T::one()) * base).collect()
}

fn eval<T: Real>(f: &mut impl FnMut(&[T]) -> Result<T>, x: &[T]) -> Result<T> {
    let v = f(x)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            value: v.to_f64_lossy(),
            point: x.iter().map(|t| t.to_f64_lossy()).collect(),
        })
    }
}

pub fn numerical_gradient<T: Real>(
    mut f: impl FnMut(&[T]) -> Result<T>,
    theta: &[T],
    steps: Option<&[T]>,
) -> Result<Vec<T>> {
    let default;
    let h = match steps {
        Some(h) => h,
        None => {
            default = gradient_steps(theta);
            &default
        }
    };
    if h.len() != theta.len() {
        return Err(Error::DimensionMismatch {
            expected: theta.len(),
            found: h.len(),
        });
    }
    let mut x = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        x[i] = theta[i] + h[i];
        let up = eval(&mut f, &x)?;
        x[i] = theta[i] - h[i];
        let down = eval(&mut f, &x)?;
        x[i] = theta[i];
        grad.push((up - down) / (T::of(2.0) * h[i]));
    }
    Ok(grad)
}

/// Central second differences, symmetrized.
pub fn numerical_hessian<T: Real>(
    mut f: impl FnMut(&[T]) -> Result<T>,
    theta: &[T],
    steps: Option<&[T]>,
) -> Result<SymMatrix<T>> {
    let p = theta.len();
    let default;
    let h = match steps {
        Some(h) => h,
        None => {
            default = hessian_steps(theta);
            &default
        }
    };
    if h.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: h.len(),
        });
    }
    let f0 = eval(&mut f, theta)?;
    let mut x = theta.to_vec();
    let mut hess = SymMatrix::zeros(p)?;
    let four = T::of(4.0);
    for i in 0..p {
        x[i] = theta[i] + h[i];
        let up = eval(&mut f, &x)?;
        x[i] = theta[i] - h[i];
        let down = eval(&mut f, &x)?;
        x[i] = theta[i];
        hess.set(i, i, (up - T::of(2.0) * f0 + down) / (h[i] * h[i]));
        for j in 0..i {
            let mut corner = |si: T, sj: T, x: &mut Vec<T>| -> Result<T> {
                x[i] = theta[i] + si * h[i];
                x[j] = theta[j] + sj * h[j];
                let v = eval(&mut f, x);
                x[i] = theta[i];
                x[j] = theta[j];
                v
            };
            let one = T::one();
            let pp = corner(one, one, &mut x)?;
            let pm = corner(one, -one, &mut x)?;
            let mp = corner(-one, one, &mut x)?;
            let mm = corner(-one, -one, &mut x)?;
            hess.set(i, j, (pp - pm - mp + mm) / (four * h[i] * h[j]));
        }
    }
    Ok(hess)
}
