use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use super::MathError;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const LN_PI: f64 = 1.144_729_885_849_400_2;

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal CDF, via `erfc` for accuracy in both tails.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

fn check_dof(dof: f64) -> Result<(), MathError> {
    if dof > 0.0 && dof.is_finite() {
        Ok(())
    } else {
        Err(MathError::InvalidDof(dof))
    }
}

/// Density of the standard Student-t distribution with `dof` degrees of freedom.
pub fn t_pdf(z: f64, dof: f64) -> Result<f64, MathError> {
    check_dof(dof)?;
    let log_norm = ln_gamma((dof + 1.0) / 2.0)
        - ln_gamma(dof / 2.0)
        - 0.5 * (dof.ln() + LN_PI);
    let log_kernel = -(dof + 1.0) / 2.0 * (z * z / dof).ln_1p();
    Ok((log_norm + log_kernel).exp())
}

/// CDF of the standard Student-t distribution, via the regularized
/// incomplete beta function.
pub fn t_cdf(z: f64, dof: f64) -> Result<f64, MathError> {
    check_dof(dof)?;
    if z == 0.0 {
        return Ok(0.5);
    }
    let x = dof / (dof + z * z);
    let tail = 0.5 * beta_reg(dof / 2.0, 0.5, x);
    Ok(if z > 0.0 { 1.0 - tail } else { tail })
}

/// Quantile of the standard Student-t distribution (inverse of [`t_cdf`]),
/// computed by bracketing + bisection. Deterministic and accurate to ~1e-13.
pub fn t_quantile(p: f64, dof: f64) -> Result<f64, MathError> {
    check_dof(dof)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(MathError::InvalidProbability(p));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    // Bracket the root of t_cdf(x) - p.
    let mut lo = -1.0;
    let mut hi = 1.0;
    while t_cdf(lo, dof)? > p {
        lo *= 2.0;
        if lo < -1e300 {
            return Err(MathError::InvalidProbability(p));
        }
    }
    while t_cdf(hi, dof)? < p {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(MathError::InvalidProbability(p));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if t_cdf(mid, dof)? < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
