//! Numerical kernels shared by the rest of the crate: minimum-norm and ridge
//! least squares, the NRMSE fit metric, and normal / Student-t distributions.

mod dist;
mod regression;

pub use dist::{normal_cdf, normal_pdf, t_cdf, t_pdf, t_quantile};
pub use regression::{nrmse, pinv_solve, ridge_solve, RegressionSolution, DEFAULT_RCOND};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MathError {
    #[error("design matrix is empty")]
    EmptyDesign,
    #[error("{0} contains non-finite values")]
    NonFinite(&'static str),
    #[error("design has {rows} rows but {targets} targets")]
    ShapeMismatch { rows: usize, targets: usize },
    #[error("rcond must lie in (0, 1), got {0}")]
    InvalidRcond(f64),
    #[error("ridge parameter must be non-negative and finite, got {0}")]
    InvalidRidge(f64),
    #[error("SVD failed to converge")]
    SvdFailure,
    #[error("slices have different lengths ({a} vs {b})")]
    LengthMismatch { a: usize, b: usize },
    #[error("NRMSE undefined: truth values are (nearly) constant")]
    DegenerateTruths,
    #[error("degrees of freedom must be positive and finite, got {0}")]
    InvalidDof(f64),
    #[error("probability must lie strictly in (0, 1), got {0}")]
    InvalidProbability(f64),
}
