//! Dense symmetric linear algebra, finite differences, and small optimizers.

pub mod dense;
pub mod diff;
pub mod optimize;
pub mod stats;

pub use dense::{
    backward_substitute, cholesky, cholesky_inverse, cholesky_solve, dot, forward_substitute,
    jacobi_eigen, spd_inverse, spd_sqrt, Matrix, SpdMatrix, SymEigen, SymMatrix,
};
pub use diff::{gradient_steps, hessian_steps, numerical_gradient, numerical_hessian};
pub use optimize::{maximize, Maximum, NelderMeadConfig};
pub use stats::{column_means, empirical_quantile, quantile_sorted, sample_covariance};
