use crate::error::{Error, Result};
use crate::linalg::dense::{Matrix, SymMatrix};
use crate::scalar::Real;

pub fn column_means<T: Real>(draws: &Matrix<T>) -> Vec<T> {
    let n = T::of_usize(draws.rows());
    let mut means = vec![T::zero(); draws.cols()];
    for i in 0..draws.rows() {
        for (m, &x) in means.iter_mut().zip(draws.row(i)) {
            *m += x;
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    means
}

/// Unbiased sample covariance (divisor J - 1) of the rows of `draws`.
pub fn sample_covariance<T: Real>(draws: &Matrix<T>) -> Result<SymMatrix<T>> {
    let rows = draws.rows();
    if rows < 2 {
        return Err(Error::TooFewRows {
            required: 2,
            found: rows,
        });
    }
    let p = draws.cols();
    let means = column_means(draws);
    let mut acc = SymMatrix::zeros(p)?;
    let mut centered = vec![T::zero(); p];
    for i in 0..rows {
        for (c, (&x, &m)) in centered.iter_mut().zip(draws.row(i).iter().zip(&means)) {
            *c = x - m;
        }
        for a in 0..p {
            for b in 0..=a {
                let v = acc.get(a, b) + centered[a] * centered[b];
                acc.set(a, b, v);
            }
        }
    }
    Ok(acc.scaled(T::one() / T::of_usize(rows - 1)))
}

/// Linear-interpolation ("type 7") empirical quantile.
pub fn empirical_quantile<T: Real>(samples: &[T], p: T) -> Result<T> {
    let mut sorted = samples.to_vec();
    sort_floats(&mut sorted);
    quantile_sorted(&sorted, p)
}

/// Type-7 quantile of already sorted data.
pub fn quantile_sorted<T: Real>(sorted: &[T], p: T) -> Result<T> {
    if sorted.is_empty() {
        return Err(Error::Empty("quantile sample"));
    }
    if !(p >= T::zero() && p <= T::one()) {
        return Err(Error::InvalidArgument(format!(
            "quantile probability {p} outside [0, 1]"
        )));
    }
    let n = sorted.len();
    let h = T::of_usize(n - 1) * p;
    let lo = h.floor();
    let lo_idx = lo.to_usize().unwrap_or(0).min(n - 1);
    let hi_idx = (lo_idx + 1).min(n - 1);
    let frac = h - lo;
    Ok(sorted[lo_idx] + frac * (sorted[hi_idx] - sorted[lo_idx]))
}

pub fn sort_floats<T: Real>(xs: &mut [T]) {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
}

pub fn mean<T: Real>(xs: &[T]) -> T {
    xs.iter().copied().sum::<T>() / T::of_usize(xs.len().max(1))
}

pub fn variance<T: Real>(xs: &[T]) -> T {
    if xs.len() < 2 {
        return T::zero();
    }
    let m = mean(xs);
    xs.iter().map(|&x| (x - m) * (x - m)).sum::<T>() / T::of_usize(xs.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal, Uniform};

    #[test]
    fn identical_rows_give_zero_covariance() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        let c = sample_covariance(&m).unwrap();
        assert!(c.to_dense().max_abs() == 0.0);
    }

    #[test]
    fn two_point_variance() {
        let m = Matrix::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(sample_covariance(&m).unwrap().get(0, 0), 2.0);
    }

    #[test]
    fn single_row_is_error() {
        let m = Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            sample_covariance(&m),
            Err(Error::TooFewRows { .. })
        ));
    }

    #[test]
    fn standard_normal_covariance_near_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let m = Matrix::from_fn(100_000, 3, |_, _| StandardNormal.sample(&mut rng));
        let c = sample_covariance::<f64>(&m).unwrap();
        assert!(c.to_dense().max_abs_diff(&Matrix::identity(3)) < 0.05);
    }

    #[test]
    fn quantile_examples() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(empirical_quantile(&xs, 0.5).unwrap(), 3.0);
        assert_eq!(empirical_quantile(&[3.0, -1.0, 7.0], 0.0).unwrap(), -1.0);
        assert_eq!(empirical_quantile(&[3.0, -1.0, 7.0], 1.0).unwrap(), 7.0);
        assert!(empirical_quantile::<f64>(&[], 0.5).is_err());
        assert!(empirical_quantile(&xs, 1.5).is_err());
    }

    #[test]
    fn uniform_quantile_monte_carlo() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let u = Uniform::new(0.0, 1.0).unwrap();
        let xs: Vec<f64> = (0..1_000_000).map(|_| u.sample(&mut rng)).collect();
        let q = empirical_quantile(&xs, 0.9).unwrap();
        assert!((q - 0.9).abs() < 0.005);
    }
}
