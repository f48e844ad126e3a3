//! Two-sample Kolmogorov-Smirnov test and effective sample size for chain comparisons.

use crate::error::{Error, Result};
use crate::linalg::stats::sort_floats;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Survival function of the Kolmogorov distribution, 2Σ(−1)^{k−1}exp(−2k²λ²).
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample KS test with the asymptotic p-value (small-sample corrected λ).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("KS sample"));
    }
    let (mut x, mut y) = (a.to_vec(), b.to_vec());
    sort_floats(&mut x);
    sort_floats(&mut y);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = (n * m / (n + m)).sqrt();
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_sf((ne + 0.12 + 0.11 / ne) * d),
    })
}

/// Effective sample size from the initial positive sequence of autocorrelations.
pub fn effective_sample_size(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return n as f64;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let c0 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return n as f64;
    }
    let acf = |lag: usize| -> f64 {
        (0..n - lag).map(|t| (xs[t] - mean) * (xs[t + lag] - mean)).sum::<f64>() / (n as f64 * c0)
    };
    let mut tau = 1.0;
    let mut lag = 1;
    while lag + 1 < n {
        let pair = acf(lag) + acf(lag + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    (n as f64 / tau).min(n as f64)
}

/// Every k-th element with k chosen so the result is roughly independent.
pub fn thin_to_effective(xs: &[f64]) -> Vec<f64> {
    let ess = effective_sample_size(xs).max(1.0);
    let step = ((xs.len() as f64 / ess).ceil() as usize).max(1);
    xs.iter().step_by(step).copied().collect()
}
