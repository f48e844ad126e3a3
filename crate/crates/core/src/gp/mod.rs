//! Gaussian-process covariance, tapering, and likelihoods.

pub mod covariance;
pub mod data;
pub mod likelihood;
pub mod linear;
pub mod model;
pub mod sparse;
pub mod taper;

pub use covariance::{cov_exponential, cov_gneiting, CovarianceFamily, CovarianceKind};
pub use data::GpDataset;
pub use likelihood::{
    analytic_PQ_tapered, build_tapered_matrix, covariance_matrix, full_gaussian_loglik,
    simulate_field, tapered_loglik, tapered_score, PatternEntry, TaperedDesign,
};
pub use linear::SpatialLinearModel;
pub use model::{simulate_gp, TaperedGpModel};
pub use sparse::{BandOrdering, SparseCholesky, SparseSymMatrix};
pub use taper::{grid_locations, taper_value, Locations, TaperKernel, TaperSpec};
