use nalgebra::{DMatrix, DVector};

use super::MathError;

/// Relative singular-value cutoff used when no explicit `rcond` is given.
pub const DEFAULT_RCOND: f64 = 1e-10;

/// Result of a linear least-squares fit.
#[derive(Debug, Clone)]
pub struct RegressionSolution {
    pub weights: DVector<f64>,
    /// NRMSE of `design * weights` against the targets (0 for exact
    /// interpolation of constant targets, +inf if constants cannot be matched).
    pub residual_nrmse: f64,
    pub max_abs_weight: f64,
}

fn check_inputs(design: &DMatrix<f64>, targets: &DVector<f64>) -> Result<(), MathError> {
    if design.nrows() == 0 || design.ncols() == 0 {
        return Err(MathError::EmptyDesign);
    }
    if design.nrows() != targets.len() {
        return Err(MathError::ShapeMismatch { rows: design.nrows(), targets: targets.len() });
    }
    if design.iter().any(|v| !v.is_finite()) {
        return Err(MathError::NonFinite("design matrix"));
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(MathError::NonFinite("targets"));
    }
    Ok(())
}

/// Sum of squared deviations from the mean, plus the largest magnitude seen.
fn spread(values: &DVector<f64>) -> (f64, f64) {
    let mean = values.mean();
    let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (ss, max_abs)
}

/// NRMSE with the interpolation convention for (nearly) constant targets:
/// a fit that matches a constant is perfect (0), one that misses it is
/// hopeless (+inf). Used for training diagnostics where constant datasets
/// are legitimate.
pub(crate) fn nrmse_unchecked(predictions: &DVector<f64>, truths: &DVector<f64>) -> f64 {
    let n = truths.len() as f64;
    let (denom, max_abs) = spread(truths);
    let num: f64 = predictions
        .iter()
        .zip(truths.iter())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    let degenerate = denom.sqrt() <= 1e-12 * (1.0 + max_abs) * n.sqrt();
    if degenerate {
        if num.sqrt() <= 1e-9 * (1.0 + max_abs) * n.sqrt() {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (num / denom).sqrt()
    }
}

/// Normalized root-mean-square error: `sqrt(sum((p_i - t_i)^2) / sum((mean(t) - t_i)^2))`.
///
/// Scale- and shift-invariant under common affine transforms of both inputs,
/// which is why training can compute it on standardized targets.
pub fn nrmse(predictions: &[f64], truths: &[f64]) -> Result<f64, MathError> {
    if predictions.len() != truths.len() {
        return Err(MathError::LengthMismatch { a: predictions.len(), b: truths.len() });
    }
    if truths.is_empty() {
        return Err(MathError::LengthMismatch { a: 0, b: 0 });
    }
    if predictions.iter().chain(truths.iter()).any(|v| !v.is_finite()) {
        return Err(MathError::NonFinite("nrmse inputs"));
    }
    let t = DVector::from_column_slice(truths);
    let (denom, max_abs) = spread(&t);
    if denom.sqrt() <= 1e-12 * (1.0 + max_abs) * (truths.len() as f64).sqrt() {
        return Err(MathError::DegenerateTruths);
    }
    let p = DVector::from_column_slice(predictions);
    Ok(nrmse_unchecked(&p, &t))
}

/// Minimum-norm least-squares solution via truncated SVD.
///
/// Singular values at or below `rcond * sigma_max` are treated as zero, so the
/// solution stays bounded for rank-deficient and ill-conditioned designs at
/// the cost of not resolving directions the data cannot support.
pub fn pinv_solve(
    design: &DMatrix<f64>,
    targets: &DVector<f64>,
    rcond: f64,
) -> Result<RegressionSolution, MathError> {
    check_inputs(design, targets)?;
    if !(rcond > 0.0 && rcond < 1.0) {
        return Err(MathError::InvalidRcond(rcond));
    }
    let svd = design
        .clone()
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or(MathError::SvdFailure)?;
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let sigma_max = svd.singular_values.max();
    let tol = rcond * sigma_max;

    // w = V * diag(1/sigma_kept) * U^T * y
    let mut coeffs = u.transpose() * targets;
    for (i, c) in coeffs.iter_mut().enumerate() {
        let s = svd.singular_values[i];
        *c = if s > tol { *c / s } else { 0.0 };
    }
    let weights = v_t.transpose() * coeffs;
    finish(design, targets, weights)
}

/// Ridge (Tikhonov) least squares: minimizes `|Aw - y|^2 + lambda |w|^2`.
///
/// `lambda == 0` falls back to [`pinv_solve`] with the default cutoff. For
/// wide designs the dual form `w = A^T (A A^T + lambda I)^-1 y` keeps the
/// factorization at the sample count rather than the feature count.
pub fn ridge_solve(
    design: &DMatrix<f64>,
    targets: &DVector<f64>,
    lambda: f64,
) -> Result<RegressionSolution, MathError> {
    check_inputs(design, targets)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(MathError::InvalidRidge(lambda));
    }
    if lambda == 0.0 {
        return pinv_solve(design, targets, DEFAULT_RCOND);
    }
    let (n, m) = design.shape();
    let weights = if m <= n {
        let mut gram = design.transpose() * design;
        for i in 0..m {
            gram[(i, i)] += lambda;
        }
        let rhs = design.transpose() * targets;
        gram.cholesky()
            .ok_or(MathError::SvdFailure)?
            .solve(&rhs)
    } else {
        let mut gram = design * design.transpose();
        for i in 0..n {
            gram[(i, i)] += lambda;
        }
        let dual = gram
            .cholesky()
            .ok_or(MathError::SvdFailure)?
            .solve(targets);
        design.transpose() * dual
    };
    finish(design, targets, weights)
}

fn finish(
    design: &DMatrix<f64>,
    targets: &DVector<f64>,
    weights: DVector<f64>,
) -> Result<RegressionSolution, MathError> {
    if weights.iter().any(|v| !v.is_finite()) {
        return Err(MathError::NonFinite("solution weights"));
    }
    let predictions = design * &weights;
    let residual_nrmse = nrmse_unchecked(&predictions, targets);
    let max_abs_weight = weights.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(RegressionSolution { weights, residual_nrmse, max_abs_weight })
}
