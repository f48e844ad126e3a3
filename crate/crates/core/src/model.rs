//! Parameters, priors, and the pluggable objective-function abstraction.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{numerical_gradient, SpdMatrix};

/// Domain of a single parameter coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    AllReals,
    Positive,
    UnitInterval,
}

impl Support {
    #[inline]
    pub fn contains(self, x: f64) -> bool {
        match self {
            Support::AllReals => x.is_finite(),
            Support::Positive => x.is_finite() && x > 0.0,
            Support::UnitInterval => (0.0..=1.0).contains(&x),
        }
    }

    pub fn is_bounded(self) -> bool {
        matches!(self, Support::UnitInterval)
    }
}

pub fn in_support(theta: &[f64], support: &[Support]) -> bool {
    theta.len() == support.len() && theta.iter().zip(support).all(|(&x, s)| s.contains(x))
}

/// Ordered parameter vector with coordinate names and supports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVec {
    values: Vec<f64>,
    names: Vec<String>,
    support: Vec<Support>,
}

impl ParamVec {
    pub fn new(values: Vec<f64>, names: Vec<String>, support: Vec<Support>) -> Result<Self> {
        if values.len() != names.len() {
            return Err(Error::DimensionMismatch {
                expected: names.len(),
                found: values.len(),
            });
        }
        if values.len() != support.len() {
            return Err(Error::DimensionMismatch {
                expected: support.len(),
                found: values.len(),
            });
        }
        for ((v, s), n) in values.iter().zip(&support).zip(&names) {
            if !s.contains(*v) {
                return Err(Error::InvalidArgument(format!(
                    "parameter `{n}` = {v} outside its support {s:?}"
                )));
            }
        }
        Ok(Self {
            values,
            names,
            support,
        })
    }

    /// Builds a vector for `model` with the given values.
    pub fn for_model<M: ObjectiveModel + ?Sized>(model: &M, values: Vec<f64>) -> Result<Self> {
        Self::new(values, model.param_names(), model.supports())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn support(&self) -> &[Support] {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(values, self.names.clone(), self.support.clone())
    }
}

/// Prior for a single coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Prior {
    HalfCauchy { scale: f64 },
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
    Flat,
}

impl Prior {
    pub fn log_density(&self, x: f64) -> f64 {
        match *self {
            Prior::HalfCauchy { scale } => {
                if x < 0.0 || !x.is_finite() {
                    f64::NEG_INFINITY
                } else {
                    let z = x / scale;
                    (2.0 / (PI * scale)).ln() - (1.0 + z * z).ln()
                }
            }
            Prior::Uniform { lo, hi } => {
                if (lo..=hi).contains(&x) {
                    -(hi - lo).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Prior::Normal { mean, sd } => {
                let z = (x - mean) / sd;
                -0.5 * z * z - sd.ln() - 0.5 * (2.0 * PI).ln()
            }
            Prior::Flat => {
                if x.is_finite() {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Prior::HalfCauchy { scale } => scale > 0.0 && scale.is_finite(),
            Prior::Uniform { lo, hi } => lo < hi && lo.is_finite() && hi.is_finite(),
            Prior::Normal { mean, sd } => mean.is_finite() && sd > 0.0 && sd.is_finite(),
            Prior::Flat => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid prior {self:?}")))
        }
    }
}

/// Independent per-coordinate priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriorSpec {
    pub coords: Vec<Prior>,
}

impl PriorSpec {
    pub fn new(coords: Vec<Prior>) -> Result<Self> {
        for p in &coords {
            p.validate()?;
        }
        Ok(Self { coords })
    }

    pub fn flat(dim: usize) -> Self {
        Self {
            coords: vec![Prior::Flat; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn select(&self, coords: &[usize]) -> Self {
        Self {
            coords: coords.iter().map(|&i| self.coords[i]).collect(),
        }
    }
}

pub fn log_prior(prior: &PriorSpec, theta: &[f64]) -> Result<f64> {
    if prior.dim() != theta.len() {
        return Err(Error::DimensionMismatch {
            expected: prior.dim(),
            found: theta.len(),
        });
    }
    Ok(prior
        .coords
        .iter()
        .zip(theta)
        .map(|(p, &x)| p.log_density(x))
        .sum())
}

/// Which optional pieces an [`ObjectiveModel`] implements.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub per_replicate_score: bool,
    pub analytic_gradient: bool,
    pub analytic_p: bool,
    pub analytic_q: bool,
    pub simulate: bool,
}

/// A quasi-likelihood ℓ_M(θ; y).
///
/// Optional methods default to [`Error::UnsupportedCapability`]; implementors that
/// override one must also set the matching flag in [`ObjectiveModel::capabilities`].
pub trait ObjectiveModel: Sync {
    type Data: Sync + Send;

    fn param_names(&self) -> Vec<String>;

    fn supports(&self) -> Vec<Support>;

    fn dim(&self) -> usize {
        self.param_names().len()
    }

    fn log_objective(&self, theta: &[f64], data: &Self::Data) -> Result<f64>;

    fn capabilities(&self) -> Capabilities;

    /// Full-data gradient; central differences unless overridden.
    fn gradient(&self, theta: &[f64], data: &Self::Data) -> Result<Vec<f64>> {
        numerical_gradient(|t| self.log_objective(t, data), theta, None)
    }

    /// Number of independent replicates in `data`.
    fn replicate_count(&self, _data: &Self::Data) -> usize {
        1
    }

    fn replicate_score(&self, _theta: &[f64], _data: &Self::Data, _r: usize) -> Result<Vec<f64>> {
        Err(Error::UnsupportedCapability("per_replicate_score"))
    }

    fn simulate(&self, _theta: &[f64], _seed: u64) -> Result<Self::Data> {
        Err(Error::UnsupportedCapability("simulate"))
    }

    fn analytic_p(&self, _theta: &[f64]) -> Result<SpdMatrix<f64>> {
        Err(Error::UnsupportedCapability("analytic_p"))
    }

    fn analytic_q(&self, _theta: &[f64]) -> Result<SpdMatrix<f64>> {
        Err(Error::UnsupportedCapability("analytic_q"))
    }
}

/// Unnormalized log quasi-posterior: ℓ_M(θ; y) + log π(θ).
pub fn log_quasi_posterior<M: ObjectiveModel + ?Sized>(
    model: &M,
    prior: &PriorSpec,
    theta: &[f64],
    data: &M::Data,
) -> Result<f64> {
    if theta.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: theta.len(),
        });
    }
    if !in_support(theta, &model.supports()) {
        return Ok(f64::NEG_INFINITY);
    }
    let lp = log_prior(prior, theta)?;
    if lp == f64::NEG_INFINITY {
        return Ok(lp);
    }
    let lo = model.log_objective(theta, data)?;
    if lo.is_nan() || lo == f64::INFINITY {
        return Err(Error::NonFinite {
            value: lo,
            point: theta.to_vec(),
        });
    }
    Ok(lo + lp)
}
