//! Derivative-free maximization (Nelder-Mead with restarts).

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadConfig {
    pub max_evals: usize,
    pub restarts: usize,
    /// Convergence when the spread of simplex values falls below this.
    pub f_tol: f64,
    /// Initial simplex edge, relative to max(|x_i|, 1).
    pub initial_step: f64,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        Self {
            max_evals: 2000,
            restarts: 2,
            f_tol: 1e-10,
            initial_step: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Maximum<T> {
    pub point: Vec<T>,
    pub value: T,
    pub evaluations: usize,
}

/// Maximizes `f`. Non-finite or failing evaluations count as -inf, so support
/// constraints can be expressed by returning `-inf`.
pub fn maximize<T: Real>(
    mut f: impl FnMut(&[T]) -> Result<T>,
    start: &[T],
    config: &NelderMeadConfig,
) -> Result<Maximum<T>> {
    let mut objective = |x: &[T]| -> T {
        match f(x) {
            Ok(v) if v.is_finite() => -v,
            _ => T::infinity(),
        }
    };
    let mut best = start.to_vec();
    let mut best_val = objective(&best);
    if !best_val.is_finite() {
        return Err(Error::Optimizer(format!(
            "objective not finite at starting point {:?}",
            start.iter().map(|x| x.to_f64_lossy()).collect::<Vec<_>>()
        )));
    }
    let mut evals = 1;
    for _ in 0..=config.restarts {
        let (x, v, used) = nelder_mead(&mut objective, &best, config);
        evals += used;
        let improved = v < best_val;
        if v <= best_val {
            best = x;
            best_val = v;
        }
        if !improved {
            break;
        }
    }
    Ok(Maximum {
        point: best,
        value: -best_val,
        evaluations: evals,
    })
}

fn nelder_mead<T: Real>(
    f: &mut impl FnMut(&[T]) -> T,
    start: &[T],
    config: &NelderMeadConfig,
) -> (Vec<T>, T, usize) {
    let n = start.len();
    let half = T::of(0.5);
    let two = T::of(2.0);
    let mut simplex: Vec<Vec<T>> = Vec::with_capacity(n + 1);
    simplex.push(start.to_vec());
    for i in 0..n {
        let mut v = start.to_vec();
        v[i] += T::of(config.initial_step) * start[i].abs().max(T::one());
        simplex.push(v);
    }
    let mut values: Vec<T> = simplex.iter().map(|x| f(x)).collect();
    let mut evals = n + 1;
    let f_tol = T::of(config.f_tol);

    while evals < config.max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| {
            values[a]
                .partial_cmp(&values[b])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = (values[n] - values[0]).abs();
        if values[n].is_finite() && spread <= f_tol * (T::one() + values[0].abs()) {
            break;
        }

        let mut centroid = vec![T::zero(); n];
        for x in &simplex[..n] {
            for (c, &xi) in centroid.iter_mut().zip(x) {
                *c += xi;
            }
        }
        centroid.iter_mut().for_each(|c| *c /= T::of_usize(n));

        let along = |t: T, worst: &[T]| -> Vec<T> {
            centroid
                .iter()
                .zip(worst)
                .map(|(&c, &w)| c + t * (w - c))
                .collect()
        };
        let reflected = along(-T::one(), &simplex[n]);
        let fr = f(&reflected);
        evals += 1;
        if fr < values[0] {
            let expanded = along(-two, &simplex[n]);
            let fe = f(&expanded);
            evals += 1;
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
        } else {
            let (contracted, fc) = if fr < values[n] {
                let c = along(-half, &simplex[n]);
                let v = f(&c);
                (c, v)
            } else {
                let c = along(half, &simplex[n]);
                let v = f(&c);
                (c, v)
            };
            evals += 1;
            if fc < values[n].min(fr) {
                simplex[n] = contracted;
                values[n] = fc;
            } else {
                let best = simplex[0].clone();
                for k in 1..=n {
                    for (x, &b) in simplex[k].iter_mut().zip(&best) {
                        *x = b + half * (*x - b);
                    }
                    values[k] = f(&simplex[k]);
                }
                evals += n;
            }
        }
    }
    let (best_idx, _) = values
        .iter()
        .enumerate()
        .fold((0, T::infinity()), |(bi, bv), (i, &v)| {
            if v < bv {
                (i, v)
            } else {
                (bi, bv)
            }
        });
    (simplex[best_idx].clone(), values[best_idx], evals)
}
