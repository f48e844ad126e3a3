//! Estimators of P and Q, the adjustment matrix Ω = Q⁻¹P^{1/2}Q^{1/2}, and the
//! post-hoc adjustment of quasi-posterior chains.
//!
//! All P̂ and Q̂ are on the total-data scale: Q̂ ≈ minus the Hessian of the full
//! objective and P̂ ≈ the covariance of its full gradient.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::likelihood::hessian_to_information;
use crate::linalg::{numerical_hessian, sample_covariance, spd_inverse, spd_sqrt, Matrix, SpdMatrix, SymMatrix};
use crate::linalg::stats::quantile_sorted;
use crate::model::{in_support, log_prior, ObjectiveModel, ParamVec, PriorSpec};
use crate::samplers::chain::{Adjusted, Chain};
use crate::seed::split_seed;

pub const DEFAULT_BOOTSTRAP_K: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PMethod {
    /// Sum of per-replicate outer products.
    Moment,
    /// Model formula at θ̂.
    Plugin,
    /// Parametric bootstrap of the full gradient.
    Bootstrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QMethod {
    /// Inverse sample covariance of the raw chain.
    ChainCov,
    /// Negative numerical Hessian at θ̂.
    Hessian,
    /// Model formula at θ̂.
    Plugin,
}

impl PMethod {
    pub fn label(self) -> &'static str {
        match self {
            PMethod::Moment => "moment",
            PMethod::Plugin => "plugin",
            PMethod::Bootstrap => "bootstrap",
        }
    }
}

impl QMethod {
    pub fn label(self) -> &'static str {
        match self {
            QMethod::ChainCov => "chain_cov",
            QMethod::Hessian => "hessian",
            QMethod::Plugin => "plugin",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    TotalData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichEstimate {
    pub p_hat: SpdMatrix<f64>,
    pub q_hat: SpdMatrix<f64>,
    pub p_method: PMethod,
    pub q_method: QMethod,
    pub scale: Scale,
    pub provenance: String,
}

impl SandwichEstimate {
    /// Certifies P̂ positive definite and checks dimensions.
    pub fn new(
        p_hat: SymMatrix<f64>,
        q_hat: SpdMatrix<f64>,
        p_method: PMethod,
        q_method: QMethod,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if p_hat.dim() != q_hat.dim() {
            return Err(Error::DimensionMismatch {
                expected: q_hat.dim(),
                found: p_hat.dim(),
            });
        }
        Ok(Self {
            p_hat: SpdMatrix::new(p_hat)?,
            q_hat,
            p_method,
            q_method,
            scale: Scale::TotalData,
            provenance: provenance.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.q_hat.dim()
    }
}

/// θ ↦ center + Ω(θ − center).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustmentMatrix {
    omega: Matrix<f64>,
    source: Option<SandwichEstimate>,
    center: ParamVec,
    #[serde(default)]
    excluded: Vec<usize>,
}

impl AdjustmentMatrix {
    /// An arbitrary invertible Ω, e.g. the identity or an inverse transform.
    pub fn from_matrix(omega: Matrix<f64>, center: ParamVec) -> Result<Self> {
        if !omega.is_square() || omega.rows() != center.len() {
            return Err(Error::DimensionMismatch {
                expected: center.len(),
                found: omega.rows(),
            });
        }
        omega.inverse()?;
        Ok(Self {
            omega,
            source: None,
            center,
            excluded: vec![],
        })
    }

    pub fn identity(center: ParamVec) -> Self {
        Self {
            omega: Matrix::identity(center.len()),
            source: None,
            center,
            excluded: vec![],
        }
    }

    pub fn omega(&self) -> &Matrix<f64> {
        &self.omega
    }

    pub fn source(&self) -> Option<&SandwichEstimate> {
        self.source.as_ref()
    }

    pub fn center(&self) -> &ParamVec {
        &self.center
    }

    pub fn excluded(&self) -> &[usize] {
        &self.excluded
    }

    pub fn dim(&self) -> usize {
        self.omega.rows()
    }

    /// Same Ω about a different center.
    pub fn recentered(&self, center: ParamVec) -> Result<Self> {
        if center.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: center.len(),
            });
        }
        Ok(Self {
            center,
            ..self.clone()
        })
    }

    /// The inverse map, about the same center.
    pub fn inverse(&self) -> Result<Self> {
        Ok(Self {
            omega: self.omega.inverse()?,
            source: None,
            center: self.center.clone(),
            excluded: self.excluded.clone(),
        })
    }

    pub fn apply(&self, theta: &[f64]) -> Vec<f64> {
        let c = self.center.values();
        (0..theta.len())
            .map(|i| {
                let s: f64 = self.omega.row(i).iter().zip(theta).zip(c).map(|((w, t), m)| w * (t - m)).sum();
                c[i] + s
            })
            .collect()
    }
}

/// Q̂_I: inverse of the sample covariance of a raw quasi-posterior chain.
pub fn q_from_chain(chain: &Chain) -> Result<SpdMatrix<f64>> {
    if chain.adjusted() != Adjusted::Raw {
        return Err(Error::InvalidArgument("Q from chain covariance needs an unadjusted chain".into()));
    }
    let p = chain.dim();
    if chain.len() < p + 1 {
        return Err(Error::TooFewRows {
            required: p + 1,
            found: chain.len(),
        });
    }
    let cov = SpdMatrix::new(sample_covariance(chain.draws())?)?;
    spd_inverse(&cov)
}

/// Q̂_II: negative numerical Hessian of ℓ_M (plus log prior when given) at `center`.
pub fn q_from_hessian<M: ObjectiveModel + ?Sized>(
    model: &M,
    prior: Option<&PriorSpec>,
    data: &M::Data,
    center: &[f64],
) -> Result<SpdMatrix<f64>> {
    if center.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: center.len(),
        });
    }
    let supports = model.supports();
    let h = numerical_hessian(
        |t| {
            if !in_support(t, &supports) {
                return Err(Error::InvalidArgument(format!(
                    "Hessian stencil left the parameter support at {t:?}"
                )));
            }
            let lp = match prior {
                Some(p) => log_prior(p, t)?,
                None => 0.0,
            };
            Ok(model.log_objective(t, data)? + lp)
        },
        center,
        None,
    )?;
    hessian_to_information(&h)
}

/// Q̂_III: the model's analytic Q at `center`.
pub fn q_plugin<M: ObjectiveModel + ?Sized>(model: &M, center: &[f64]) -> Result<SpdMatrix<f64>> {
    model.analytic_q(center)
}

/// P̂_II: the model's analytic P at `center`.
pub fn p_plugin<M: ObjectiveModel + ?Sized>(model: &M, center: &[f64]) -> Result<SpdMatrix<f64>> {
    model.analytic_p(center)
}

/// P̂_I: Σᵢ sᵢsᵢ' over replicates, i.e. n times the per-replicate moment estimator.
pub fn p_moment<M: ObjectiveModel + ?Sized>(model: &M, data: &M::Data, center: &[f64]) -> Result<SymMatrix<f64>> {
    if !model.capabilities().per_replicate_score {
        return Err(Error::UnsupportedCapability("per_replicate_score"));
    }
    let n = model.replicate_count(data);
    if n < 2 {
        return Err(Error::UnsupportedConfiguration(
            "the moment estimator of P needs independent replicates; a single realization gives no viable estimate \
             (use the plug-in or bootstrap estimator)"
                .into(),
        ));
    }
    let p = model.dim();
    let mut acc = vec![0.0; p * p];
    for r in 0..n {
        let s = model.replicate_score(center, data, r)?;
        add_outer(&mut acc, &s);
    }
    SymMatrix::from_lower_fn(p, |i, j| acc[i * p + j])
}

/// P̂_boot: (1/K) Σₖ gₖgₖ' with gₖ the full gradient on a dataset simulated at `center`.
pub fn p_bootstrap<M: ObjectiveModel + ?Sized>(model: &M, center: &[f64], k: usize, seed: u64) -> Result<SymMatrix<f64>> {
    if !model.capabilities().simulate {
        return Err(Error::UnsupportedCapability("simulate"));
    }
    let p = model.dim();
    if k < p + 1 {
        return Err(Error::InvalidArgument(format!("bootstrap size {k} below p + 1 = {}", p + 1)));
    }
    let grads: Vec<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|i| {
            let data = model.simulate(center, split_seed(seed, i as u64))?;
            model.gradient(center, &data)
        })
        .collect::<Result<_>>()?;
    let mut acc = vec![0.0; p * p];
    for g in &grads {
        add_outer(&mut acc, g);
    }
    let kf = k as f64;
    SymMatrix::from_lower_fn(p, |i, j| acc[i * p + j] / kf)
}

fn add_outer(acc: &mut [f64], s: &[f64]) {
    let p = s.len();
    for i in 0..p {
        for j in 0..p {
            acc[i * p + j] += s[i] * s[j];
        }
    }
}

/// Ω = Q̂⁻¹ P̂^{1/2} Q̂^{1/2}. Coordinates in `excluded` are decoupled from the rest in
/// P̂ and Q̂ and left untouched (identity rows and columns of Ω).
pub fn assemble_omega(est: &SandwichEstimate, center: &ParamVec, excluded: &[usize]) -> Result<AdjustmentMatrix> {
    let p = est.dim();
    if center.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: center.len(),
        });
    }
    if let Some(&bad) = excluded.iter().find(|&&i| i >= p) {
        return Err(Error::InvalidArgument(format!("excluded coordinate {bad} out of range")));
    }
    let (pm, qm) = if excluded.is_empty() {
        (est.p_hat.clone(), est.q_hat.clone())
    } else {
        (
            SpdMatrix::new(est.p_hat.as_sym().decouple(excluded))?,
            SpdMatrix::new(est.q_hat.as_sym().decouple(excluded))?,
        )
    };
    let q_inv = spd_inverse(&qm)?.to_dense();
    let p_half = spd_sqrt(&pm)?.to_dense();
    let q_half = spd_sqrt(&qm)?.to_dense();
    let mut omega = q_inv.matmul(&p_half)?.matmul(&q_half)?;
    for &k in excluded {
        for j in 0..p {
            omega[(k, j)] = 0.0;
            omega[(j, k)] = 0.0;
        }
        omega[(k, k)] = 1.0;
    }
    let mut excl = excluded.to_vec();
    excl.sort_unstable();
    excl.dedup();
    Ok(AdjustmentMatrix {
        omega,
        source: Some(est.clone()),
        center: center.clone(),
        excluded: excl,
    })
}

/// Maps every draw through θ̂ + Ω(θ − θ̂). Draws leaving the support are kept and
/// counted in the chain metadata, never clamped.
pub fn ofs_adjust(chain: &Chain, omega: &AdjustmentMatrix) -> Result<Chain> {
    if chain.adjusted() != Adjusted::Raw {
        return Err(Error::InvalidArgument(format!(
            "chain is already adjusted ({:?}); adjust the raw chain instead",
            chain.adjusted()
        )));
    }
    apply_transform(chain, omega, Adjusted::Ofs)
}

/// Undoes [`ofs_adjust`] given the same adjustment.
pub fn ofs_unadjust(chain: &Chain, omega: &AdjustmentMatrix) -> Result<Chain> {
    if chain.adjusted() != Adjusted::Ofs {
        return Err(Error::InvalidArgument("only OFS-adjusted chains can be unadjusted".into()));
    }
    apply_transform(chain, &omega.inverse()?, Adjusted::Raw)
}

fn apply_transform(chain: &Chain, omega: &AdjustmentMatrix, flag: Adjusted) -> Result<Chain> {
    let p = chain.dim();
    if omega.dim() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: omega.dim(),
        });
    }
    let mut out = Matrix::zeros(chain.len(), p);
    let mut violations = 0u64;
    for r in 0..chain.len() {
        let y = omega.apply(chain.draws().row(r));
        violations += u64::from(!in_support(&y, chain.supports()));
        out.row_mut(r).copy_from_slice(&y);
    }
    Ok(chain.with_draws(out, flag, violations))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CredibleInterval {
    pub name: String,
    pub level: f64,
    pub lo: f64,
    pub hi: f64,
}

impl CredibleInterval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Equi-tailed interval between the α/2 and 1 − α/2 empirical quantiles.
pub fn credible_interval(chain: &Chain, coordinate: usize, alpha: f64) -> Result<CredibleInterval> {
    let mut col = chain.column(coordinate);
    crate::linalg::stats::sort_floats(&mut col);
    interval_from_sorted(&col, &chain.names()[coordinate], alpha)
}

/// [`credible_interval`] on an already sorted sample.
pub fn interval_from_sorted(sorted: &[f64], name: &str, alpha: f64) -> Result<CredibleInterval> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside (0, 1)")));
    }
    Ok(CredibleInterval {
        name: name.to_string(),
        level: 1.0 - alpha,
        lo: quantile_sorted(sorted, alpha / 2.0)?,
        hi: quantile_sorted(sorted, 1.0 - alpha / 2.0)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Support;
    use crate::samplers::chain::ChainMeta;

    fn center(v: Vec<f64>) -> ParamVec {
        let p = v.len();
        ParamVec::new(v, (0..p).map(|i| format!("t{i}")).collect(), vec![Support::AllReals; p]).unwrap()
    }

    fn est(p: &[Vec<f64>], q: &[Vec<f64>]) -> SandwichEstimate {
        SandwichEstimate::new(
            SymMatrix::from_rows(p).unwrap(),
            SpdMatrix::from_rows(q).unwrap(),
            PMethod::Plugin,
            QMethod::Plugin,
            "test",
        )
        .unwrap()
    }

    fn raw_chain(rows: Vec<Vec<f64>>) -> Chain {
        let p = rows[0].len();
        let n = rows.len();
        Chain::new(
            Matrix::from_rows(&rows).unwrap(),
            vec![0.0; n],
            ChainMeta {
                names: (0..p).map(|i| format!("t{i}")).collect(),
                supports: vec![Support::AllReals; p],
                seed: 0,
                config: None,
                adjusted: Adjusted::Raw,
                acceptance_rate: 0.0,
                accepted: 0,
                proposed: 0,
                support_violations: 0,
                blocks: vec![],
                proposal_scale: vec![],
            },
        )
        .unwrap()
    }

    #[test]
    fn omega_examples() {
        let e = est(&[vec![4.0]], &[vec![2.0]]);
        let w = assemble_omega(&e, &center(vec![0.0]), &[]).unwrap();
        assert!((w.omega()[(0, 0)] - 2f64.sqrt()).abs() < 1e-14);

        let m = vec![vec![2.0, 0.3], vec![0.3, 1.0]];
        let w = assemble_omega(&est(&m, &m), &center(vec![0.0, 0.0]), &[]).unwrap();
        assert!(w.omega().max_abs_diff(&Matrix::identity(2)) < 1e-12);
    }

    #[test]
    fn common_scale_invariance() {
        let p = vec![vec![3.0, 0.5], vec![0.5, 1.0]];
        let q = vec![vec![1.5, -0.2], vec![-0.2, 0.7]];
        let a = assemble_omega(&est(&p, &q), &center(vec![0.0, 0.0]), &[]).unwrap();
        let sc = |m: &Vec<Vec<f64>>| m.iter().map(|r| r.iter().map(|x| x * 37.0).collect()).collect::<Vec<Vec<f64>>>();
        let b = assemble_omega(&est(&sc(&p), &sc(&q)), &center(vec![0.0, 0.0]), &[]).unwrap();
        assert!(a.omega().max_abs_diff(b.omega()) < 1e-10);
    }

    #[test]
    fn exclusion_leaves_coordinate_alone() {
        let p = vec![vec![3.0, 0.5], vec![0.5, 1.0]];
        let q = vec![vec![1.5, -0.2], vec![-0.2, 0.7]];
        let w = assemble_omega(&est(&p, &q), &center(vec![1.0, 2.0]), &[1]).unwrap();
        assert_eq!(w.omega()[(1, 1)], 1.0);
        assert_eq!(w.omega()[(0, 1)], 0.0);
        assert_eq!(w.omega()[(1, 0)], 0.0);
        assert!((w.omega()[(0, 0)] - (3.0f64 / 1.5).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn adjust_preserves_mean_and_maps_covariance() {
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64 * 0.7).sin(), (i as f64 * 0.3).cos()]).collect();
        let chain = raw_chain(rows);
        let mean = crate::linalg::column_means(chain.draws());
        let w = Matrix::from_rows(&[vec![1.3, 0.2], vec![-0.1, 0.8]]).unwrap();
        let adj = AdjustmentMatrix::from_matrix(w.clone(), center(mean.clone())).unwrap();
        let out = ofs_adjust(&chain, &adj).unwrap();
        let m2 = crate::linalg::column_means(out.draws());
        for i in 0..2 {
            assert!((m2[i] - mean[i]).abs() < 1e-14);
        }
        let s = sample_covariance(chain.draws()).unwrap().to_dense();
        let want = w.matmul(&s).unwrap().matmul(&w.transpose()).unwrap();
        let got = sample_covariance(out.draws()).unwrap().to_dense();
        assert!(got.max_abs_diff(&want) < 1e-12);

        let back = ofs_unadjust(&out, &adj).unwrap();
        assert!(back.draws().max_abs_diff(chain.draws()) < 1e-12);
        assert!(ofs_adjust(&out, &adj).is_err());
    }

    #[test]
    fn identity_adjust_is_noop() {
        let chain = raw_chain(vec![vec![1.0, 2.0], vec![3.0, -1.0]]);
        let out = ofs_adjust(&chain, &AdjustmentMatrix::identity(center(vec![0.5, 0.5]))).unwrap();
        assert_eq!(out.draws(), chain.draws());
        assert_eq!(out.adjusted(), Adjusted::Ofs);
    }

    #[test]
    fn interval_examples() {
        let chain = raw_chain(vec![vec![-1.0], vec![0.0], vec![1.0]]);
        let ci = credible_interval(&chain, 0, 2.0 / 3.0).unwrap();
        assert!(ci.contains(0.0));
        assert!((ci.lo + ci.hi).abs() < 1e-15);
        let wide = credible_interval(&chain, 0, 0.1).unwrap();
        assert!(wide.width() >= ci.width());
        assert!(credible_interval(&chain, 0, 1.0).is_err());
    }

    #[test]
    fn scalar_diagonal_omega_scales_width() {
        let rows: Vec<Vec<f64>> = (0..101).map(|i| vec![i as f64 / 10.0]).collect();
        let chain = raw_chain(rows);
        let c = quasi_center(&chain);
        let adj = AdjustmentMatrix::from_matrix(Matrix::from_diagonal(&[2.5]), c).unwrap();
        let out = ofs_adjust(&chain, &adj).unwrap();
        let a = credible_interval(&chain, 0, 0.1).unwrap();
        let b = credible_interval(&out, 0, 0.1).unwrap();
        assert!((b.width() - 2.5 * a.width()).abs() < 1e-12);
    }

    fn quasi_center(chain: &Chain) -> ParamVec {
        crate::samplers::chain::quasi_bayes_estimate(chain).unwrap()
    }

    #[test]
    fn chain_q_requires_rows() {
        let chain = raw_chain(vec![vec![1.0, 2.0], vec![3.0, -1.0]]);
        assert!(matches!(q_from_chain(&chain), Err(Error::TooFewRows { .. })));
    }
}
