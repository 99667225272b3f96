//! Ordinary-kriging baseline: squared-exponential correlation, constant
//! trend, concentrated-likelihood hyperparameter search. Used both as the
//! single-fidelity comparison loop and as a wrapper that turns an expensive
//! low-fidelity code into a cheap emulator.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::PredictiveDist;
use crate::adaptive::{
    run_loop, stream_seed, AdaptiveError, Dataset, EnsembleStats, Problem, RunSettings, RunState,
    Surrogate, STREAM_GPR,
};
use crate::e2nn::Emulator;

#[derive(Debug, Error)]
pub enum GprError {
    #[error("kriging needs at least 2 training points, got {0}")]
    TooFewPoints(usize),
    #[error("{points} points but {targets} targets")]
    LengthMismatch { points: usize, targets: usize },
    #[error("{0} is not finite")]
    NonFinite(&'static str),
    #[error("invalid settings: {0}")]
    InvalidSettings(String),
    #[error("correlation matrix stayed singular up to nugget {max_nugget}")]
    SingularCorrelation { max_nugget: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GprSettings {
    /// Per-dimension length-scale parameter search range (scaled units).
    pub theta_bounds: (f64, f64),
    pub multistarts: usize,
    /// Jitter added to the correlation diagonal; grows x10 on Cholesky
    /// failure until `nugget_max`.
    pub nugget_initial: f64,
    pub nugget_max: f64,
    pub seed: u64,
}

impl Default for GprSettings {
    fn default() -> Self {
        Self {
            theta_bounds: (1e-3, 1e3),
            multistarts: 10,
            nugget_initial: 1e-10,
            nugget_max: 1e-4,
            seed: 0,
        }
    }
}

/// Fitted ordinary-kriging model over `exp(-sum_j theta_j (x_j - x'_j)^2)`.
#[derive(Debug, Clone)]
pub struct GprModel {
    x_train: DMatrix<f64>,
    y_train: DVector<f64>,
    theta: Vec<f64>,
    sigma2: f64,
    mu_hat: f64,
    nugget: f64,
    chol: Cholesky<f64, Dyn>,
    /// R^-1 (y - mu 1), precomputed for the BLUP mean.
    alpha: DVector<f64>,
    /// R^-1 1, for the ordinary-kriging variance correction.
    r_inv_ones: DVector<f64>,
    ones_r_inv_ones: f64,
}

fn correlation_matrix(x: &DMatrix<f64>, theta: &[f64], nugget: f64) -> DMatrix<f64> {
    let n = x.nrows();
    let mut r = DMatrix::zeros(n, n);
    for i in 0..n {
        r[(i, i)] = 1.0 + nugget;
        for j in (i + 1)..n {
            let mut s = 0.0;
            for (k, &t) in theta.iter().enumerate() {
                let d = x[(i, k)] - x[(j, k)];
                s += t * d * d;
            }
            let c = (-s).exp();
            r[(i, j)] = c;
            r[(j, i)] = c;
        }
    }
    r
}

struct LikelihoodFit {
    chol: Cholesky<f64, Dyn>,
    mu_hat: f64,
    sigma2: f64,
    log_likelihood: f64,
}

/// Concentrated log-likelihood: profile out mu and sigma^2, leaving
/// -(n ln sigma^2 + ln det R)/2. None when the Cholesky fails.
fn concentrated_fit(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    theta: &[f64],
    nugget: f64,
) -> Option<LikelihoodFit> {
    let n = x.nrows();
    let r = correlation_matrix(x, theta, nugget);
    let chol = Cholesky::new(r)?;
    let ones = DVector::from_element(n, 1.0);
    let r_inv_y = chol.solve(y);
    let r_inv_ones = chol.solve(&ones);
    let denom = ones.dot(&r_inv_ones);
    if denom <= 0.0 || !denom.is_finite() {
        return None;
    }
    let mu_hat = ones.dot(&r_inv_y) / denom;
    let centered = y - &ones * mu_hat;
    let sigma2 = (centered.dot(&chol.solve(&centered)) / n as f64).max(0.0);
    let ln_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    // sigma2 = 0 (constant targets) sends the likelihood to +inf; every theta
    // ties there, which keeps the search deterministic and the fit exact.
    let log_likelihood = -0.5 * (n as f64 * sigma2.max(f64::MIN_POSITIVE).ln() + ln_det);
    if !log_likelihood.is_finite() && sigma2 > 0.0 {
        return None;
    }
    Some(LikelihoodFit { chol, mu_hat, sigma2, log_likelihood })
}

/// Maximizes the concentrated likelihood over log10(theta) with a coordinate
/// pattern search from one starting point. Only ever moves uphill.
fn pattern_search(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    start_log10: &[f64],
    bounds_log10: (f64, f64),
    nugget: f64,
) -> Option<(Vec<f64>, f64)> {
    let d = start_log10.len();
    let eval = |log_theta: &[f64]| -> Option<f64> {
        let theta: Vec<f64> = log_theta.iter().map(|v| 10f64.powf(*v)).collect();
        concentrated_fit(x, y, &theta, nugget).map(|f| f.log_likelihood)
    };
    let mut current = start_log10.to_vec();
    let mut best = eval(&current)?;
    let mut step = 0.5;
    while step >= 1e-3 {
        let mut improved = false;
        for j in 0..d {
            for dir in [-1.0, 1.0] {
                let mut cand = current.clone();
                cand[j] = (cand[j] + dir * step).clamp(bounds_log10.0, bounds_log10.1);
                if let Some(v) = eval(&cand) {
                    if v > best {
                        best = v;
                        current = cand;
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Some((current, best))
}

/// Fits ordinary kriging on points in scaled space. Multistart pattern
/// search over log-theta; the nugget escalates x10 whenever no start
/// produces a factorizable correlation matrix.
pub fn gpr_fit(x: &DMatrix<f64>, y: &[f64], settings: &GprSettings) -> Result<GprModel, GprError> {
    let n = x.nrows();
    if n < 2 {
        return Err(GprError::TooFewPoints(n));
    }
    if y.len() != n {
        return Err(GprError::LengthMismatch { points: n, targets: y.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(GprError::NonFinite("training inputs"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(GprError::NonFinite("training targets"));
    }
    let (t_lo, t_hi) = settings.theta_bounds;
    if !(t_lo > 0.0 && t_hi > t_lo) {
        return Err(GprError::InvalidSettings("theta_bounds must be 0 < lo < hi".into()));
    }
    if settings.multistarts == 0 {
        return Err(GprError::InvalidSettings("multistarts must be at least 1".into()));
    }
    if !(settings.nugget_initial > 0.0 && settings.nugget_max >= settings.nugget_initial) {
        return Err(GprError::InvalidSettings(
            "nugget must satisfy 0 < initial <= max".into(),
        ));
    }
    let d = x.ncols();
    let y_vec = DVector::from_column_slice(y);
    let bounds_log10 = (t_lo.log10(), t_hi.log10());

    // Start points: the bounds midpoint first, then seeded uniform draws in
    // log space. Redrawn identically per nugget level so escalation does not
    // shift the search.
    let starts: Vec<Vec<f64>> = {
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
        let mid = 0.5 * (bounds_log10.0 + bounds_log10.1);
        let mut s = vec![vec![mid; d]];
        for _ in 1..settings.multistarts {
            s.push((0..d).map(|_| rng.gen_range(bounds_log10.0..=bounds_log10.1)).collect());
        }
        s
    };

    let mut nugget = settings.nugget_initial;
    loop {
        let mut best: Option<(Vec<f64>, f64)> = None;
        for start in &starts {
            if let Some((log_theta, ll)) = pattern_search(x, &y_vec, start, bounds_log10, nugget) {
                let better = match &best {
                    Some((_, cur)) => ll > *cur,
                    None => true,
                };
                if better {
                    best = Some((log_theta, ll));
                }
            }
        }
        if let Some((log_theta, _)) = best {
            let theta: Vec<f64> = log_theta.iter().map(|v| 10f64.powf(*v)).collect();
            let fit = concentrated_fit(x, &y_vec, &theta, nugget)
                .expect("winning theta factorized during the search");
            let ones = DVector::from_element(n, 1.0);
            let centered = &y_vec - &ones * fit.mu_hat;
            let alpha = fit.chol.solve(&centered);
            let r_inv_ones = fit.chol.solve(&ones);
            let ones_r_inv_ones = ones.dot(&r_inv_ones);
            return Ok(GprModel {
                x_train: x.clone(),
                y_train: y_vec,
                theta,
                sigma2: fit.sigma2,
                mu_hat: fit.mu_hat,
                nugget,
                chol: fit.chol,
                alpha,
                r_inv_ones,
                ones_r_inv_ones,
            });
        }
        if nugget >= settings.nugget_max {
            return Err(GprError::SingularCorrelation { max_nugget: settings.nugget_max });
        }
        nugget = (nugget * 10.0).min(settings.nugget_max);
    }
}

impl GprModel {
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn mu_hat(&self) -> f64 {
        self.mu_hat
    }

    pub fn nugget(&self) -> f64 {
        self.nugget
    }

    pub fn len(&self) -> usize {
        self.y_train.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_train.is_empty()
    }

    fn correlation_vector(&self, x: &[f64]) -> DVector<f64> {
        let n = self.x_train.nrows();
        DVector::from_fn(n, |i, _| {
            let mut s = 0.0;
            for (k, &t) in self.theta.iter().enumerate() {
                let d = x[k] - self.x_train[(i, k)];
                s += t * d * d;
            }
            (-s).exp()
        })
    }

    /// BLUP mean and standard deviation at one scaled point. The variance
    /// carries the ordinary-kriging correction for the estimated trend.
    ///
    /// The nugget is numerical jitter, not observation noise, so queries
    /// that coincide with a training row return that response exactly;
    /// otherwise the smoothed predictor would miss data sites by about
    /// nugget * |R^-1 (y - mu 1)|.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        assert_eq!(x.len(), self.x_train.ncols(), "query dimension mismatch");
        for i in 0..self.x_train.nrows() {
            let hit = (0..x.len()).all(|k| (x[k] - self.x_train[(i, k)]).abs() <= 1e-12);
            if hit {
                return (self.y_train[i], 0.0);
            }
        }
        let k = self.correlation_vector(x);
        let mean = self.mu_hat + k.dot(&self.alpha);
        let r_inv_k = self.chol.solve(&k);
        let trend = 1.0 - k.dot(&self.r_inv_ones);
        let var =
            self.sigma2 * (1.0 - k.dot(&r_inv_k) + trend * trend / self.ones_r_inv_ones).max(0.0);
        (mean, var.sqrt())
    }

    /// Log-likelihood of the fitted hyperparameters (for diagnostics and
    /// the monotonicity contract of the multistart search).
    pub fn log_likelihood(&self) -> f64 {
        let n = self.len() as f64;
        let ln_det = 2.0 * self.chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        -0.5 * (n * self.sigma2.max(f64::MIN_POSITIVE).ln() + ln_det)
    }

    /// Wraps the fitted model as an emulator so an expensive low-fidelity
    /// code can be sampled once and embedded as its kriging interpolant.
    pub fn into_emulator(self, name: impl Into<String>) -> Emulator {
        Emulator::new(name, move |x: &[f64]| self.predict(x).0)
    }
}

pub fn gpr_predict(model: &GprModel, x: &[f64]) -> (f64, f64) {
    model.predict(x)
}

/// Concentrated log-likelihood of an arbitrary theta on a dataset, or None
/// when the correlation matrix does not factor at that nugget. Lets callers
/// audit that the fitted theta beats any given starting point.
pub fn log_likelihood_at(
    x: &DMatrix<f64>,
    y: &[f64],
    theta: &[f64],
    nugget: f64,
) -> Option<f64> {
    let y_vec = DVector::from_column_slice(y);
    concentrated_fit(x, &y_vec, theta, nugget).map(|f| f.log_likelihood)
}

struct GprSurrogate(GprModel);

impl Surrogate for GprSurrogate {
    fn predict_batch(&self, points: &DMatrix<f64>) -> Result<Vec<PredictiveDist>, AdaptiveError> {
        Ok((0..points.nrows())
            .map(|r| {
                let x: Vec<f64> = points.row(r).iter().copied().collect();
                let (mean, sd) = self.0.predict(&x);
                PredictiveDist::Gaussian { mean, sd }
            })
            .collect())
    }

    fn stats(&self) -> Option<EnsembleStats> {
        None
    }
}

/// Result of a kriging-driven run: loop state plus the final model, trained
/// on the complete dataset.
#[derive(Debug)]
pub struct EgoRun {
    pub state: RunState,
    pub model: GprModel,
}

/// Single-fidelity EGO: the same loop contract as the ensemble run, with
/// kriging refit each iteration and Gaussian EI.
pub fn run_ego(problem: &Problem, settings: &RunSettings) -> Result<EgoRun, AdaptiveError> {
    let (state, surrogate) = run_loop(problem, settings, |ds: &Dataset, iteration| {
        let mut gs = settings.gpr.clone();
        gs.seed = settings
            .gpr
            .seed
            .wrapping_add(stream_seed(settings.seed, iteration, STREAM_GPR));
        let model = gpr_fit(&ds.scaled_matrix(), ds.targets(), &gs)?;
        Ok(GprSurrogate(model))
    })?;
    Ok(EgoRun { state, model: surrogate.0 })
}
