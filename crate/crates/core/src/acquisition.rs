//! Expected improvement (EI) for minimization under Gaussian or Student-t
//! predictive distributions, plus a quadrature oracle for validating the
//! closed forms.

use thiserror::Error;

use crate::ensemble::TPrediction;
use crate::math::{normal_cdf, normal_pdf, t_cdf, t_pdf, MathError};

#[derive(Debug, Error)]
pub enum AcquisitionError {
    #[error("Student-t expected improvement requires dof > 1, got {0}")]
    InvalidDof(f64),
    #[error("scale must be non-negative and finite, got {0}")]
    InvalidScale(f64),
    #[error("{0} must be finite")]
    NonFinite(&'static str),
    #[error("quadrature did not converge on [{lo}, {hi}]")]
    QuadratureFailure { lo: f64, hi: f64 },
    #[error(transparent)]
    Math(#[from] MathError),
}

/// A one-dimensional predictive distribution an acquisition can be computed
/// from. The two cases this crate produces: Gaussian (kriging) and
/// location-scale Student-t (ensemble fusion).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PredictiveDist {
    Gaussian { mean: f64, sd: f64 },
    StudentT(TPrediction),
}

impl PredictiveDist {
    pub fn mean(&self) -> f64 {
        match self {
            PredictiveDist::Gaussian { mean, .. } => *mean,
            PredictiveDist::StudentT(t) => t.mean,
        }
    }

    /// Expected improvement below `f_min` under this distribution.
    pub fn ei(&self, f_min: f64) -> Result<f64, AcquisitionError> {
        match self {
            PredictiveDist::Gaussian { mean, sd } => ei_gaussian(*mean, *sd, f_min),
            PredictiveDist::StudentT(t) => ei_student_t(t, f_min),
        }
    }
}

fn check_location(mean: f64, f_min: f64) -> Result<(), AcquisitionError> {
    if !mean.is_finite() {
        return Err(AcquisitionError::NonFinite("mean"));
    }
    if !f_min.is_finite() {
        return Err(AcquisitionError::NonFinite("f_min"));
    }
    Ok(())
}

/// Closed-form EI for a Gaussian prediction:
/// `(f_min - mean) * Phi(z) + sd * phi(z)` with `z = (f_min - mean)/sd`.
/// A zero-spread prediction degenerates to the deterministic improvement
/// `max(f_min - mean, 0)`.
pub fn ei_gaussian(mean: f64, sd: f64, f_min: f64) -> Result<f64, AcquisitionError> {
    check_location(mean, f_min)?;
    if !(sd >= 0.0 && sd.is_finite()) {
        return Err(AcquisitionError::InvalidScale(sd));
    }
    let gap = f_min - mean;
    if sd == 0.0 {
        return Ok(gap.max(0.0));
    }
    let z = gap / sd;
    Ok((gap * normal_cdf(z) + sd * normal_pdf(z)).max(0.0))
}

/// Closed-form EI for a location-scale Student-t prediction:
/// `(f_min - mean) * T_nu(z) + scale * (nu + z^2)/(nu - 1) * t_nu(z)`.
///
/// The improvement integral only converges for `dof > 1` (the distribution
/// must have a mean); smaller dof is an error rather than something to clamp.
pub fn ei_student_t(pred: &TPrediction, f_min: f64) -> Result<f64, AcquisitionError> {
    check_location(pred.mean, f_min)?;
    if !(pred.dof > 1.0) {
        return Err(AcquisitionError::InvalidDof(pred.dof));
    }
    if !(pred.scale >= 0.0 && pred.scale.is_finite()) {
        return Err(AcquisitionError::InvalidScale(pred.scale));
    }
    let gap = f_min - pred.mean;
    if pred.scale == 0.0 {
        return Ok(gap.max(0.0));
    }
    let z = gap / pred.scale;
    let nu = pred.dof;
    let cdf = t_cdf(z, nu)?;
    let pdf = t_pdf(z, nu)?;
    Ok((gap * cdf + pred.scale * (nu + z * z) / (nu - 1.0) * pdf).max(0.0))
}

/// EI by adaptive quadrature of `(f_min - y) * pdf(y)` over
/// `[support.0, min(support.1, f_min)]`: the oracle the closed forms are
/// tested against.
///
/// The integral runs in the variable `y = tan(theta)`, which compactifies
/// arbitrarily wide supports and turns polynomial pdf tails into well-behaved
/// integrands (for pdfs with a finite mean). A minimum refinement depth
/// guards against a pdf spike slipping between coarse probe points.
pub fn ei_numeric_oracle(
    pdf: &dyn Fn(f64) -> f64,
    f_min: f64,
    support: (f64, f64),
) -> Result<f64, AcquisitionError> {
    if !f_min.is_finite() {
        return Err(AcquisitionError::NonFinite("f_min"));
    }
    let (lo, hi) = support;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(AcquisitionError::NonFinite("support bounds"));
    }
    let hi = hi.min(f_min);
    if hi <= lo {
        return Ok(0.0);
    }
    let g = move |theta: f64| {
        let y = theta.tan();
        let sec_sq = 1.0 + y * y;
        (f_min - y) * pdf(y) * sec_sq
    };
    let (ta, tb) = (lo.atan(), hi.atan());
    let coarse = ((tb - ta) / 6.0) * (g(ta) + 4.0 * g(0.5 * (ta + tb)) + g(tb));
    if !coarse.is_finite() {
        return Err(AcquisitionError::NonFinite("integrand evaluations"));
    }
    let eps = 1e-12 * coarse.abs().max(1.0);
    let value = adaptive_simpson(&g, ta, tb, eps, MIN_DEPTH, MAX_DEPTH)?;
    Ok(value.max(0.0))
}

/// Force this many halvings before trusting a convergence estimate.
const MIN_DEPTH: u32 = 11;
const MAX_DEPTH: u32 = 52;

fn adaptive_simpson(
    g: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    eps: f64,
    min_depth: u32,
    max_depth: u32,
) -> Result<f64, AcquisitionError> {
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        g: &dyn Fn(f64) -> f64,
        a: f64,
        m: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        eps: f64,
        min_depth: u32,
        depth_left: u32,
    ) -> Result<f64, AcquisitionError> {
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let (flm, frm) = (g(lm), g(rm));
        if !(flm.is_finite() && frm.is_finite()) {
            return Err(AcquisitionError::NonFinite("integrand evaluations"));
        }
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        let interval_exhausted = (b - a) < 1e-15 * (a.abs() + b.abs() + 1.0);
        if (min_depth == 0 && delta.abs() <= 15.0 * eps) || interval_exhausted {
            return Ok(left + right + delta / 15.0);
        }
        if depth_left == 0 {
            return Err(AcquisitionError::QuadratureFailure { lo: a, hi: b });
        }
        let half_eps = 0.5 * eps;
        let next_min = min_depth.saturating_sub(1);
        Ok(
            recurse(g, a, lm, m, fa, flm, fm, left, half_eps, next_min, depth_left - 1)?
                + recurse(g, m, rm, b, fm, frm, fb, right, half_eps, next_min, depth_left - 1)?,
        )
    }

    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (g(a), g(m), g(b));
    if !(fa.is_finite() && fm.is_finite() && fb.is_finite()) {
        return Err(AcquisitionError::NonFinite("integrand evaluations"));
    }
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    recurse(g, a, m, b, fa, fm, fb, whole, eps, min_depth, max_depth)
}

/// Best observation so far: the incumbent the improvement is measured
/// against. Tracks the raw best sample, not a model mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Incumbent {
    pub x: Vec<f64>,
    pub y: f64,
}

impl Incumbent {
    pub fn from_observations<'a, I>(observations: I) -> Option<Self>
    where
        I: IntoIterator<Item = (&'a [f64], f64)>,
    {
        observations
            .into_iter()
            .filter(|(_, y)| y.is_finite())
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(x, y)| Incumbent { x: x.to_vec(), y })
    }

    /// Replaces the incumbent if `y` improves on it.
    pub fn observe(&mut self, x: &[f64], y: f64) -> bool {
        if y < self.y {
            self.x = x.to_vec();
            self.y = y;
            true
        } else {
            false
        }
    }
}
