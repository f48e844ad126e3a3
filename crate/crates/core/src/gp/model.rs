//! The tapered Gaussian-process likelihood as an [`ObjectiveModel`].

use super::covariance::CovarianceFamily;
use super::data::GpDataset;
use super::likelihood::{covariance_matrix, draw_correlated, TaperedDesign};
use super::taper::{Locations, TaperSpec};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, Matrix, SpdMatrix};
use crate::model::{Capabilities, ObjectiveModel, Support};
use crate::seed::rng_from_seed;

/// Tapered log-likelihood over the free covariance parameters, with an optional
/// fixed linear mean Xβ.
#[derive(Debug, Clone)]
pub struct TaperedGpModel {
    design: TaperedDesign<f64>,
    template: CovarianceFamily<f64>,
    covariates: Option<Matrix<f64>>,
    beta: Option<Vec<f64>>,
}

impl TaperedGpModel {
    pub fn new(locations: Locations<f64>, taper: TaperSpec<f64>, template: CovarianceFamily<f64>) -> Result<Self> {
        template.validate()?;
        Ok(Self {
            design: TaperedDesign::new(locations, taper)?,
            template,
            covariates: None,
            beta: None,
        })
    }

    /// Adds a linear mean Xβ with β held fixed.
    pub fn with_linear_mean(mut self, covariates: Matrix<f64>, beta: Vec<f64>) -> Result<Self> {
        if covariates.rows() != self.design.n() {
            return Err(Error::DimensionMismatch {
                expected: self.design.n(),
                found: covariates.rows(),
            });
        }
        if covariates.cols() != beta.len() {
            return Err(Error::DimensionMismatch {
                expected: covariates.cols(),
                found: beta.len(),
            });
        }
        self.covariates = Some(covariates);
        self.beta = Some(beta);
        Ok(self)
    }

    pub fn design(&self) -> &TaperedDesign<f64> {
        &self.design
    }

    pub fn family(&self, theta: &[f64]) -> Result<CovarianceFamily<f64>> {
        self.template.with_params(theta)
    }

    pub fn beta(&self) -> Option<&[f64]> {
        self.beta.as_deref()
    }

    fn residual(&self, data: &GpDataset) -> Result<Vec<f64>> {
        if data.len() != self.design.n() {
            return Err(Error::DimensionMismatch {
                expected: self.design.n(),
                found: data.len(),
            });
        }
        data.residual(self.beta.as_deref())
    }

    /// Simulates a dataset at `theta` with an arbitrary mean vector.
    pub fn simulate_with_mean(&self, theta: &[f64], mean: Option<&[f64]>, seed: u64) -> Result<GpDataset> {
        let fam = self.family(theta)?;
        let l = cholesky(&covariance_matrix(&fam, self.design.locations())?)?;
        let y = draw_correlated(&l, mean, &mut rng_from_seed(seed));
        GpDataset::new(y, self.design.locations().clone(), self.covariates.clone())
    }
}

impl ObjectiveModel for TaperedGpModel {
    type Data = GpDataset;

    fn param_names(&self) -> Vec<String> {
        self.template.free_param_names()
    }

    fn supports(&self) -> Vec<Support> {
        self.template.free_param_supports()
    }

    fn log_objective(&self, theta: &[f64], data: &GpDataset) -> Result<f64> {
        let y = self.residual(data)?;
        self.design.loglik(&self.family(theta)?, &y)
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            per_replicate_score: false,
            analytic_gradient: true,
            analytic_p: true,
            analytic_q: true,
            simulate: true,
        }
    }

    fn gradient(&self, theta: &[f64], data: &GpDataset) -> Result<Vec<f64>> {
        let y = self.residual(data)?;
        self.design.score(&self.family(theta)?, &y)
    }

    fn simulate(&self, theta: &[f64], seed: u64) -> Result<GpDataset> {
        let mean = match (&self.covariates, &self.beta) {
            (Some(x), Some(b)) => Some(x.matvec(b)?),
            _ => None,
        };
        self.simulate_with_mean(theta, mean.as_deref(), seed)
    }

    fn analytic_p(&self, theta: &[f64]) -> Result<SpdMatrix<f64>> {
        Ok(self.design.analytic_pq(&self.family(theta)?)?.0)
    }

    fn analytic_q(&self, theta: &[f64]) -> Result<SpdMatrix<f64>> {
        Ok(self.design.analytic_pq(&self.family(theta)?)?.1)
    }
}

/// Simulates y = Xβ + Lz at the given locations.
pub fn simulate_gp(
    family: &CovarianceFamily<f64>,
    locations: &Locations<f64>,
    mean: Option<(&Matrix<f64>, &[f64])>,
    seed: u64,
) -> Result<GpDataset> {
    let l = cholesky(&covariance_matrix(family, locations)?)?;
    let mu = match mean {
        Some((x, b)) => Some(x.matvec(b)?),
        None => None,
    };
    let y = draw_correlated(&l, mu.as_deref(), &mut rng_from_seed(seed));
    GpDataset::new(y, locations.clone(), mean.map(|(x, _)| x.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::taper::grid_locations;

    #[test]
    fn site_variance_and_neighbour_correlation() {
        let locs = Locations::new(vec![[0.0, 0.0], [1.0, 0.0]], None).unwrap();
        let fam = CovarianceFamily::exponential(1.0, 0.2).unwrap();
        let sims = 10_000;
        let (mut s00, mut s01, mut s11) = (0.0, 0.0, 0.0);
        for k in 0..sims {
            let d = simulate_gp(&fam, &locs, None, k).unwrap();
            s00 += d.values[0] * d.values[0];
            s01 += d.values[0] * d.values[1];
            s11 += d.values[1] * d.values[1];
        }
        let v0 = s00 / sims as f64;
        assert!((v0 - 1.0).abs() < 0.03, "{v0}");
        let corr = s01 / (s00 * s11).sqrt();
        assert!((corr - (-0.2f64).exp()).abs() < 0.02, "{corr}");
    }

    #[test]
    fn model_gradient_is_design_score() {
        let locs = grid_locations(5, 1.0).unwrap();
        let model = TaperedGpModel::new(
            locs,
            TaperSpec::wendland(3.0).unwrap(),
            CovarianceFamily::exponential(1.0, 0.2).unwrap(),
        )
        .unwrap();
        let d = model.simulate(&[1.0, 0.2], 4).unwrap();
        let g = model.gradient(&[1.1, 0.25], &d).unwrap();
        let fd = crate::linalg::numerical_gradient(|t| model.log_objective(t, &d), &[1.1, 0.25], None).unwrap();
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-5 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn seeded_reproducibility() {
        let locs = grid_locations(3, 1.0).unwrap();
        let fam = CovarianceFamily::exponential(1.0, 0.2).unwrap();
        assert_eq!(simulate_gp(&fam, &locs, None, 5).unwrap(), simulate_gp(&fam, &locs, None, 5).unwrap());
    }
}
