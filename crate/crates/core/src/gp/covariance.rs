//! Exponential and Gneiting space-time covariance families.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Support;
use crate::scalar::Real;

/// Covariance function parameters. `alpha` and `gamma` of the Gneiting family are
/// held fixed; all other fields are free parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovarianceKind<T> {
    /// σ² exp(−(c/σ²) h)
    Exponential { sigma2: T, c: T },
    /// σ²/ψ² · exp(−(c/σ²) h^{2γ} / ψ^{ωγ}) with ψ = a u^{2α} + 1
    Gneiting {
        sigma2: T,
        a: T,
        c: T,
        alpha: T,
        gamma: T,
        omega: T,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceFamily<T> {
    #[serde(flatten)]
    pub kind: CovarianceKind<T>,
    /// Free nugget variance added on the diagonal, when present.
    #[serde(default)]
    pub nugget: Option<T>,
}

impl<T: Real> CovarianceFamily<T> {
    pub fn exponential(sigma2: T, c: T) -> Result<Self> {
        let f = Self {
            kind: CovarianceKind::Exponential { sigma2, c },
            nugget: None,
        };
        f.validate()?;
        Ok(f)
    }

    /// Gneiting family with α = 1 and γ = 0.5.
    pub fn gneiting(sigma2: T, a: T, c: T, omega: T) -> Result<Self> {
        let f = Self {
            kind: CovarianceKind::Gneiting {
                sigma2,
                a,
                c,
                alpha: T::one(),
                gamma: T::of(0.5),
                omega,
            },
            nugget: None,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn with_nugget(mut self, nugget: T) -> Result<Self> {
        self.nugget = Some(nugget);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |x: T| x > T::zero() && x.is_finite();
        let ok = match self.kind {
            CovarianceKind::Exponential { sigma2, c } => pos(sigma2) && pos(c),
            CovarianceKind::Gneiting {
                sigma2,
                a,
                c,
                alpha,
                gamma,
                omega,
            } => {
                pos(sigma2)
                    && pos(a)
                    && pos(c)
                    && alpha > T::zero()
                    && alpha <= T::one()
                    && gamma > T::zero()
                    && gamma <= T::one()
                    && omega >= T::zero()
                    && omega <= T::one()
            }
        } && self.nugget.is_none_or(|n| n >= T::zero() && n.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid covariance parameters {self:?}"
            )))
        }
    }

    pub fn sigma2(&self) -> T {
        match self.kind {
            CovarianceKind::Exponential { sigma2, .. } | CovarianceKind::Gneiting { sigma2, .. } => {
                sigma2
            }
        }
    }

    pub fn free_param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = match self.kind {
            CovarianceKind::Exponential { .. } => vec!["sigma2".into(), "c".into()],
            CovarianceKind::Gneiting { .. } => {
                vec!["sigma2".into(), "a".into(), "c".into(), "omega".into()]
            }
        };
        if self.nugget.is_some() {
            names.push("nugget".into());
        }
        names
    }

    pub fn free_param_supports(&self) -> Vec<Support> {
        let mut s = match self.kind {
            CovarianceKind::Exponential { .. } => vec![Support::Positive; 2],
            CovarianceKind::Gneiting { .. } => vec![
                Support::Positive,
                Support::Positive,
                Support::Positive,
                Support::UnitInterval,
            ],
        };
        if self.nugget.is_some() {
            s.push(Support::Positive);
        }
        s
    }

    pub fn n_params(&self) -> usize {
        let base = match self.kind {
            CovarianceKind::Exponential { .. } => 2,
            CovarianceKind::Gneiting { .. } => 4,
        };
        base + usize::from(self.nugget.is_some())
    }

    pub fn params(&self) -> Vec<T> {
        let mut p = match self.kind {
            CovarianceKind::Exponential { sigma2, c } => vec![sigma2, c],
            CovarianceKind::Gneiting {
                sigma2,
                a,
                c,
                omega,
                ..
            } => vec![sigma2, a, c, omega],
        };
        if let Some(n) = self.nugget {
            p.push(n);
        }
        p
    }

    /// Copy with free parameters replaced by `theta` (ordering of [`Self::params`]).
    pub fn with_params(&self, theta: &[T]) -> Result<Self> {
        if theta.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                expected: self.n_params(),
                found: theta.len(),
            });
        }
        let kind = match self.kind {
            CovarianceKind::Exponential { .. } => CovarianceKind::Exponential {
                sigma2: theta[0],
                c: theta[1],
            },
            CovarianceKind::Gneiting { alpha, gamma, .. } => CovarianceKind::Gneiting {
                sigma2: theta[0],
                a: theta[1],
                c: theta[2],
                alpha,
                gamma,
                omega: theta[3],
            },
        };
        let nugget = self.nugget.map(|_| theta[theta.len() - 1]);
        let f = Self { kind, nugget };
        f.validate()?;
        Ok(f)
    }

    /// Covariance at spatial lag `h` and temporal lag `u`, excluding the nugget.
    #[inline]
    pub fn value(&self, h: T, u: T) -> T {
        match self.kind {
            CovarianceKind::Exponential { sigma2, c } => sigma2 * (-(c / sigma2) * h).exp(),
            CovarianceKind::Gneiting {
                sigma2,
                a,
                c,
                alpha,
                gamma,
                omega,
            } => {
                let psi = a * powf_nonneg(u, T::of(2.0) * alpha) + T::one();
                let e = (c / sigma2) * powf_nonneg(h, T::of(2.0) * gamma) * psi.powf(-omega * gamma);
                sigma2 / (psi * psi) * (-e).exp()
            }
        }
    }

    /// Matrix entry: the covariance plus the nugget on the diagonal (`same_obs`).
    #[inline]
    pub fn entry(&self, h: T, u: T, same_obs: bool) -> T {
        let v = self.value(h, u);
        match (same_obs, self.nugget) {
            (true, Some(n)) => v + n,
            _ => v,
        }
    }

    /// Partial derivatives of [`Self::entry`] with respect to the free parameters.
    pub fn gradient(&self, h: T, u: T, same_obs: bool, out: &mut [T]) {
        match self.kind {
            CovarianceKind::Exponential { sigma2, c } => {
                let e = (-(c / sigma2) * h).exp();
                out[0] = e * (T::one() + c * h / sigma2);
                out[1] = -h * e;
            }
            CovarianceKind::Gneiting {
                sigma2,
                a,
                c,
                alpha,
                gamma,
                omega,
            } => {
                let u2a = powf_nonneg(u, T::of(2.0) * alpha);
                let h2g = powf_nonneg(h, T::of(2.0) * gamma);
                let psi = a * u2a + T::one();
                let e = (c / sigma2) * h2g * psi.powf(-omega * gamma);
                let cov = sigma2 / (psi * psi) * (-e).exp();
                out[0] = cov / sigma2 * (T::one() + e);
                out[1] = cov * (omega * gamma * e - T::of(2.0)) * u2a / psi;
                out[2] = -cov * e / c;
                out[3] = cov * gamma * e * psi.ln();
            }
        }
        if self.nugget.is_some() {
            let last = out.len() - 1;
            out[last] = if same_obs { T::one() } else { T::zero() };
        }
    }
}

#[inline]
fn powf_nonneg<T: Real>(x: T, p: T) -> T {
    if x == T::zero() {
        T::zero()
    } else if p == T::one() {
        x
    } else if p == T::of(2.0) {
        x * x
    } else {
        x.powf(p)
    }
}

/// σ² exp(−(c/σ²) h).
pub fn cov_exponential<T: Real>(sigma2: T, c: T, h: T) -> Result<T> {
    if !(h >= T::zero()) {
        return Err(Error::InvalidArgument(format!("negative lag {h}")));
    }
    Ok(CovarianceFamily::exponential(sigma2, c)?.value(h, T::zero()))
}

pub fn cov_gneiting<T: Real>(family: &CovarianceFamily<T>, h: T, u: T) -> Result<T> {
    family.validate()?;
    if !(h >= T::zero() && u >= T::zero()) {
        return Err(Error::InvalidArgument(format!("negative lag ({h}, {u})")));
    }
    if !matches!(family.kind, CovarianceKind::Gneiting { .. }) {
        return Err(Error::InvalidArgument("not a Gneiting family".into()));
    }
    Ok(family.value(h, u))
}
