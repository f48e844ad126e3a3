//! Spatial linear model y = Xβ + e with tapered-likelihood covariance parameters,
//! sampled by Gibbs: θ | β by Metropolis, β | θ drawn exactly.

use super::covariance::CovarianceFamily;
use super::data::GpDataset;
use super::model::{simulate_gp, TaperedGpModel};
use super::taper::{Locations, TaperSpec};
use crate::error::{Error, Result};
use crate::linalg::{maximize, spd_inverse, Matrix, NelderMeadConfig, SpdMatrix, SymMatrix};
use crate::model::{in_support, log_prior, ObjectiveModel, ParamVec, PriorSpec, Support};
use crate::samplers::gibbs::{conjugate_normal_draw, GibbsBlock, GibbsSpec};
use crate::sandwich::{assemble_omega, AdjustmentMatrix, PMethod, QMethod, SandwichEstimate};

#[derive(Debug, Clone)]
pub struct SpatialLinearModel {
    gp: TaperedGpModel,
    covariates: Matrix<f64>,
    theta_prior: PriorSpec,
}

impl SpatialLinearModel {
    pub fn new(
        locations: Locations<f64>,
        taper: TaperSpec<f64>,
        template: CovarianceFamily<f64>,
        covariates: Matrix<f64>,
        theta_prior: PriorSpec,
    ) -> Result<Self> {
        if covariates.rows() != locations.len() {
            return Err(Error::DimensionMismatch {
                expected: locations.len(),
                found: covariates.rows(),
            });
        }
        let gp = TaperedGpModel::new(locations, taper, template)?;
        if theta_prior.dim() != gp.dim() {
            return Err(Error::DimensionMismatch {
                expected: gp.dim(),
                found: theta_prior.dim(),
            });
        }
        Ok(Self {
            gp,
            covariates,
            theta_prior,
        })
    }

    pub fn gp(&self) -> &TaperedGpModel {
        &self.gp
    }

    pub fn covariates(&self) -> &Matrix<f64> {
        &self.covariates
    }

    pub fn theta_dim(&self) -> usize {
        self.gp.dim()
    }

    pub fn beta_dim(&self) -> usize {
        self.covariates.cols()
    }

    pub fn theta_coords(&self) -> Vec<usize> {
        (0..self.theta_dim()).collect()
    }

    pub fn beta_coords(&self) -> Vec<usize> {
        (self.theta_dim()..self.theta_dim() + self.beta_dim()).collect()
    }

    /// Covariance parameters followed by `beta1..betaq`.
    pub fn spec(&self) -> GibbsSpec {
        let mut names = self.gp.param_names();
        names.extend((1..=self.beta_dim()).map(|k| format!("beta{k}")));
        let mut supports = self.gp.supports();
        supports.extend(vec![Support::AllReals; self.beta_dim()]);
        GibbsSpec { names, supports }
    }

    pub fn simulate(&self, theta: &[f64], beta: &[f64], seed: u64) -> Result<GpDataset> {
        simulate_gp(
            &self.gp.family(theta)?,
            self.gp.design().locations(),
            Some((&self.covariates, beta)),
            seed,
        )
    }

    fn residual(&self, data: &GpDataset, beta: &[f64]) -> Result<Vec<f64>> {
        let fit = self.covariates.matvec(beta)?;
        if data.len() != fit.len() {
            return Err(Error::DimensionMismatch {
                expected: fit.len(),
                found: data.len(),
            });
        }
        Ok(data.values.iter().zip(&fit).map(|(y, f)| y - f).collect())
    }

    /// Tapered log-likelihood of θ given β, on the full (θ, β) vector.
    pub fn theta_objective(&self, data: &GpDataset, full: &[f64]) -> Result<f64> {
        let (theta, beta) = full.split_at(self.theta_dim());
        if !in_support(theta, &self.gp.supports()) {
            return Ok(f64::NEG_INFINITY);
        }
        let r = self.residual(data, beta)?;
        self.gp.design().loglik(&self.gp.family(theta)?, &r)
    }

    /// Quasi full conditional of θ up to a constant.
    pub fn theta_log_conditional(&self, data: &GpDataset, full: &[f64]) -> Result<f64> {
        let lp = log_prior(&self.theta_prior, &full[..self.theta_dim()])?;
        if lp == f64::NEG_INFINITY {
            return Ok(lp);
        }
        Ok(self.theta_objective(data, full)? + lp)
    }

    /// Mean and covariance of β | θ under a flat prior on β.
    pub fn beta_conditional(&self, data: &GpDataset, theta: &[f64]) -> Result<(Vec<f64>, SymMatrix<f64>)> {
        let (xtwx, xtwy) =
            self.gp
                .design()
                .weighted_normal_equations(&self.gp.family(theta)?, &self.covariates, &data.values)?;
        let cov = spd_inverse(&SpdMatrix::new(xtwx)?)?;
        let mean = cov.to_dense().matvec(&xtwy)?;
        Ok((mean, cov.into_sym()))
    }

    /// Systematic scan (θ, then β); the θ block is a quasi block.
    pub fn blocks<'a>(&'a self, data: &'a GpDataset) -> Vec<GibbsBlock<'a>> {
        let p = self.theta_dim();
        vec![
            GibbsBlock::metropolis("theta", self.theta_coords(), move |t| self.theta_log_conditional(data, t)).quasi(),
            GibbsBlock::direct("beta", self.beta_coords(), move |t, rng| {
                let (mean, cov) = self.beta_conditional(data, &t[..p])?;
                conjugate_normal_draw(&mean, &cov, rng)
            }),
        ]
    }

    /// Ordinary least squares β.
    pub fn ols(&self, data: &GpDataset) -> Result<Vec<f64>> {
        let x = &self.covariates;
        let xtx = SpdMatrix::new(SymMatrix::from_dense(&x.transpose().matmul(x)?)?)?;
        let xty = x.transpose().matvec(&data.values)?;
        spd_inverse(&xtx)?.to_dense().matvec(&xty)
    }

    /// Maximizes the θ objective with β fixed.
    pub fn fit_theta(&self, data: &GpDataset, beta: &[f64], start: &[f64]) -> Result<Vec<f64>> {
        let mut full = start.to_vec();
        full.extend_from_slice(beta);
        let p = self.theta_dim();
        let best = maximize(
            |t| {
                full[..p].copy_from_slice(t);
                self.theta_objective(data, &full)
            },
            start,
            &NelderMeadConfig::default(),
        )?;
        Ok(best.point)
    }

    /// Plug-in θ-block adjustment at `theta`, centered at `center` (θ coordinates only).
    pub fn theta_adjustment(&self, theta: &[f64], center: &[f64]) -> Result<AdjustmentMatrix> {
        let (p, q) = self.gp.design().analytic_pq(&self.gp.family(theta)?)?;
        let est = SandwichEstimate::new(p.into_sym(), q, PMethod::Plugin, QMethod::Plugin, "theta block plug-in")?;
        let c = ParamVec::new(center.to_vec(), self.gp.param_names(), self.gp.supports())?;
        assemble_omega(&est, &c, &[])
    }

    /// Per-iteration estimator for the θ block: conditional mode of θ given the
    /// current β, then the plug-in adjustment there.
    pub fn conditional_estimator<'a>(
        &'a self,
        data: &'a GpDataset,
    ) -> impl FnMut(usize, &[f64]) -> Result<AdjustmentMatrix> + 'a {
        let p = self.theta_dim();
        move |block, full| {
            if block != 0 {
                return Err(Error::InvalidArgument(format!("block {block} takes no adjustment")));
            }
            let mode = self.fit_theta(data, &full[p..], &full[..p])?;
            self.theta_adjustment(&mode, &mode)
        }
    }
}
