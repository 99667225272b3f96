//! Outer adaptive-sampling loop: initial design, surrogate rebuild,
//! acquisition maximization, convergence test, sample injection.

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{AcquisitionError, Incumbent, PredictiveDist};
use crate::benchmarks::BenchmarkProblem;
use crate::e2nn::Emulator;
use crate::ensemble::{build_ensemble, Ensemble, EnsembleConfig, EnsembleError};
use crate::gpr::{GprError, GprSettings};

#[derive(Debug, Error)]
pub enum AdaptiveError {
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("point has dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{0} is not finite")]
    NonFinite(&'static str),
    #[error("invalid settings: {0}")]
    InvalidSettings(String),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Acquisition(#[from] AcquisitionError),
    #[error(transparent)]
    Gpr(#[from] GprError),
}

fn check_bounds(bounds: &[(f64, f64)]) -> Result<(), AdaptiveError> {
    if bounds.is_empty() {
        return Err(AdaptiveError::InvalidBounds("no dimensions".into()));
    }
    for (j, &(lo, hi)) in bounds.iter().enumerate() {
        if !lo.is_finite() || !hi.is_finite() || lo >= hi {
            return Err(AdaptiveError::InvalidBounds(format!(
                "dimension {j}: ({lo}, {hi})"
            )));
        }
    }
    Ok(())
}

pub(crate) fn scale_to_unit(x: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    x.iter()
        .zip(bounds)
        .map(|(&v, &(lo, hi))| 2.0 * (v - lo) / (hi - lo) - 1.0)
        .collect()
}

pub(crate) fn unscale_from_unit(z: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    z.iter()
        .zip(bounds)
        .map(|(&v, &(lo, hi))| lo + (v + 1.0) * (hi - lo) / 2.0)
        .collect()
}

/// Training data kept in both original units and the [-1,1]^d coordinates
/// the surrogates operate in.
#[derive(Debug, Clone)]
pub struct Dataset {
    bounds: Vec<(f64, f64)>,
    x: Vec<Vec<f64>>,
    x_scaled: Vec<Vec<f64>>,
    y: Vec<f64>,
}

impl Dataset {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self, AdaptiveError> {
        check_bounds(&bounds)?;
        Ok(Self { bounds, x: Vec::new(), x_scaled: Vec::new(), y: Vec::new() })
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Points in original units, insertion order.
    pub fn points(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn points_scaled(&self) -> &[Vec<f64>] {
        &self.x_scaled
    }

    pub fn targets(&self) -> &[f64] {
        &self.y
    }

    pub fn scale_point(&self, x: &[f64]) -> Vec<f64> {
        scale_to_unit(x, &self.bounds)
    }

    pub fn unscale_point(&self, z: &[f64]) -> Vec<f64> {
        unscale_from_unit(z, &self.bounds)
    }

    pub fn push(&mut self, x: Vec<f64>, y: f64) -> Result<(), AdaptiveError> {
        if x.len() != self.dim() {
            return Err(AdaptiveError::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(AdaptiveError::NonFinite("input point"));
        }
        if !y.is_finite() {
            return Err(AdaptiveError::NonFinite("response"));
        }
        self.x_scaled.push(self.scale_point(&x));
        self.x.push(x);
        self.y.push(y);
        Ok(())
    }

    /// Scaled points as a row-per-sample matrix.
    pub fn scaled_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.dim(), |r, c| self.x_scaled[r][c])
    }
}

/// Latin hypercube design on [-1,1]^d. Per dimension: a shuffled assignment
/// of points to the n strata, then a uniform offset inside each stratum.
/// Draw order (shuffle first, then the n offsets) is fixed; it is part of
/// what makes runs reproducible.
pub fn lhs_design(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    assert!(n >= 1 && d >= 1, "lhs_design needs n >= 1 and d >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols = vec![vec![0.0; n]; d];
    for col in cols.iter_mut() {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for (i, slot) in col.iter_mut().enumerate() {
            let u: f64 = rng.gen();
            *slot = -1.0 + 2.0 * (order[i] as f64 + u) / n as f64;
        }
    }
    (0..n).map(|i| cols.iter().map(|col| col[i]).collect()).collect()
}

/// An optimization target: expensive objective, cheap emulators to embed,
/// and box bounds, all in original units.
#[derive(Clone)]
pub struct Problem {
    pub name: String,
    pub bounds: Vec<(f64, f64)>,
    pub hf: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    pub emulators: Vec<Emulator>,
}

impl Problem {
    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn evaluate_hf(&self, x: &[f64]) -> f64 {
        (self.hf)(x)
    }

    /// Emulators re-expressed over [-1,1]^d coordinates, which is where the
    /// surrogates live.
    pub fn scaled_emulators(&self) -> Vec<Emulator> {
        self.emulators
            .iter()
            .map(|e| {
                let inner = e.clone();
                let bounds = self.bounds.clone();
                Emulator::new(e.name().to_string(), move |z: &[f64]| {
                    inner.evaluate(&unscale_from_unit(z, &bounds))
                })
            })
            .collect()
    }
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("bounds", &self.bounds)
            .field("emulators", &self.emulators)
            .finish()
    }
}

impl From<&BenchmarkProblem> for Problem {
    fn from(b: &BenchmarkProblem) -> Self {
        Problem {
            name: b.name.to_string(),
            bounds: b.bounds.clone(),
            hf: b.hf.clone(),
            emulators: b.lf_list.clone(),
        }
    }
}

/// How the initial high-fidelity samples are placed.
#[derive(Debug, Clone)]
pub enum InitDesign {
    /// Latin hypercube seeded by the run seed.
    Lhs,
    /// Caller-specified points in original units.
    Explicit(Vec<Vec<f64>>),
}

/// 3 points suffice in 1D; otherwise at least 8 and growing with dimension.
pub fn default_n_init(d: usize) -> usize {
    if d == 1 {
        3
    } else {
        (2 * d + 2).max(8)
    }
}

#[derive(Debug, Clone)]
pub struct RunSettings {
    /// Initial sample count; `None` picks [`default_n_init`].
    pub n_init: Option<usize>,
    pub init_design: InitDesign,
    /// Relative stopping tolerance: stop once ei* < tol * max(1, |f_min|).
    pub ei_tolerance: f64,
    /// Adaptive-sample budget; `None` picks 50 * d.
    pub max_iterations: Option<usize>,
    pub seed: u64,
    pub ensemble: EnsembleConfig,
    pub gpr: GprSettings,
}

impl RunSettings {
    pub fn new(seed: u64) -> Self {
        Self {
            n_init: None,
            init_design: InitDesign::Lhs,
            ei_tolerance: 1e-4,
            max_iterations: None,
            seed,
            ensemble: EnsembleConfig::default(),
            gpr: GprSettings::default(),
        }
    }
}

impl Default for RunSettings {
    fn default() -> Self {
        Self::new(0)
    }
}

/// Decorrelates the RNG streams consumed at one iteration of one run.
pub(crate) fn stream_seed(run_seed: u64, iteration: usize, stream: u64) -> u64 {
    run_seed
        .wrapping_mul(1_000_000)
        .wrapping_add(iteration as u64 * 10_000)
        .wrapping_add(stream)
}

pub(crate) const STREAM_ENSEMBLE: u64 = 0;
pub(crate) const STREAM_MAXIMIZER: u64 = 7;
pub(crate) const STREAM_GPR: u64 = 13;

/// Health snapshot of one ensemble build (absent for kriging runs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub retained: usize,
    pub dropped_weight: usize,
    pub dropped_nrmse: usize,
    /// Final Fourier scale per architecture.
    pub fourier_scales: BTreeMap<String, f64>,
    pub escalations: BTreeMap<String, u32>,
    /// Worst training NRMSE over retained members.
    pub max_training_nrmse: f64,
    /// Largest |last-layer weight| over retained members.
    pub max_abs_weight: f64,
}

pub fn ensemble_stats(e: &Ensemble) -> EnsembleStats {
    let mut dropped_weight = 0;
    let mut dropped_nrmse = 0;
    let mut max_nrmse = 0.0f64;
    let mut max_w = 0.0f64;
    for r in e.records() {
        match r.status {
            crate::ensemble::MemberStatus::Retained => {
                max_nrmse = max_nrmse.max(r.training_nrmse);
                max_w = max_w.max(r.max_abs_weight);
            }
            crate::ensemble::MemberStatus::DroppedWeightMagnitude { .. } => dropped_weight += 1,
            crate::ensemble::MemberStatus::DroppedNrmse { .. } => dropped_nrmse += 1,
        }
    }
    let (esc_small, esc_large) = e.escalations();
    EnsembleStats {
        retained: e.len(),
        dropped_weight,
        dropped_nrmse,
        fourier_scales: BTreeMap::from([
            ("small".to_string(), e.small_fourier_scale()),
            ("large".to_string(), e.large_fourier_scale()),
        ]),
        escalations: BTreeMap::from([
            ("small".to_string(), esc_small),
            ("large".to_string(), esc_large),
        ]),
        max_training_nrmse: max_nrmse,
        max_abs_weight: max_w,
    }
}

/// One adaptive sample: where it went, what it cost, and the health of the
/// surrogate that proposed it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Original units.
    pub x_added: Vec<f64>,
    pub hf_value: f64,
    pub ei_star: f64,
    pub f_min_after: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleStats>,
}

#[derive(Debug)]
pub struct RunState {
    /// Adaptive samples added (equals `history.len()`).
    pub iteration: usize,
    pub dataset: Dataset,
    pub incumbent: Incumbent,
    pub history: Vec<IterationRecord>,
    pub converged: bool,
    /// Set when the loop stopped on `max_iterations` instead of tolerance.
    pub budget_exhausted: bool,
    pub ei_tolerance: f64,
    pub max_iterations: usize,
    /// Health of the last surrogate built (trained on the full dataset).
    pub final_stats: Option<EnsembleStats>,
}

pub(crate) trait Surrogate {
    /// Predictive distributions at scaled points (one row per point).
    fn predict_batch(&self, points: &DMatrix<f64>) -> Result<Vec<PredictiveDist>, AdaptiveError>;
    fn stats(&self) -> Option<EnsembleStats>;
}

pub(crate) struct EnsembleSurrogate(pub Ensemble);

impl Surrogate for EnsembleSurrogate {
    fn predict_batch(&self, points: &DMatrix<f64>) -> Result<Vec<PredictiveDist>, AdaptiveError> {
        Ok(self
            .0
            .posterior_batch(points)?
            .into_iter()
            .map(PredictiveDist::StudentT)
            .collect())
    }

    fn stats(&self) -> Option<EnsembleStats> {
        Some(ensemble_stats(&self.0))
    }
}

const HALTON_PRIMES: [usize; 25] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97,
];

fn halton(mut i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

fn inf_norm_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Minimum scaled infinity-norm distance a new sample must keep from every
/// existing one; duplicated rows make the regression design rank-deficient.
pub const DUPLICATE_GUARD: f64 = 1e-6;

const CANDIDATES_PER_DIM: usize = 4096;
const REFINE_TOP: usize = 8;
const REFINE_EVALS: usize = 50;
const MIDPOINT_JITTER_SD: f64 = 0.01;
const EVAL_CHUNK: usize = 1024;

/// Global candidate sweep plus local polish for the EI landscape, all in
/// scaled coordinates. Returns the scaled argmax and its EI. The landscape
/// is cheap but nonsmooth (member drop transitions), so a dense quasi-random
/// sweep with a derivative-free polish is more reliable than gradients here.
pub fn maximize_with(
    predict: &dyn Fn(&DMatrix<f64>) -> Result<Vec<PredictiveDist>, AdaptiveError>,
    dataset: &Dataset,
    incumbent: &Incumbent,
    seed: u64,
) -> Result<(Vec<f64>, f64), AdaptiveError> {
    let d = dataset.dim();
    if d > HALTON_PRIMES.len() {
        return Err(AdaptiveError::InvalidSettings(format!(
            "candidate generation supports up to {} dimensions, got {d}",
            HALTON_PRIMES.len()
        )));
    }
    let f_min = incumbent.y;
    let training = dataset.points_scaled();
    let clear_of_training =
        |x: &[f64]| training.iter().all(|t| inf_norm_dist(x, t) > DUPLICATE_GUARD);

    // Draw order: d rotation offsets, then d jitters per training-pair
    // midpoint. Candidates are a rotated Halton set (space-filling, seeded)
    // plus jittered pair midpoints, where interpolation gaps live.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rot: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
    let n_halton = CANDIDATES_PER_DIM * d;
    let mut candidates: Vec<Vec<f64>> = Vec::with_capacity(n_halton);
    for i in 0..n_halton {
        candidates.push(
            (0..d)
                .map(|j| 2.0 * (halton(i + 1, HALTON_PRIMES[j]) + rot[j]).fract() - 1.0)
                .collect(),
        );
    }
    let jitter = Normal::new(0.0, MIDPOINT_JITTER_SD).expect("constant sd is valid");
    for a in 0..training.len() {
        for b in (a + 1)..training.len() {
            let mid: Vec<f64> = (0..d)
                .map(|j| {
                    let m = 0.5 * (training[a][j] + training[b][j]) + jitter.sample(&mut rng);
                    m.clamp(-1.0, 1.0)
                })
                .collect();
            candidates.push(mid);
        }
    }

    let mut ei_values = Vec::with_capacity(candidates.len());
    for chunk in candidates.chunks(EVAL_CHUNK) {
        let m = DMatrix::from_fn(chunk.len(), d, |r, c| chunk[r][c]);
        for pred in predict(&m)? {
            ei_values.push(pred.ei(f_min)?);
        }
    }

    let mut order: Vec<usize> =
        (0..candidates.len()).filter(|&i| clear_of_training(&candidates[i])).collect();
    if order.is_empty() {
        // Cannot happen with a space-filling sweep unless the guard swallows
        // the whole box; fall back rather than panic.
        order = (0..candidates.len()).collect();
    }
    order.sort_by(|&a, &b| ei_values[b].total_cmp(&ei_values[a]).then(a.cmp(&b)));

    let mut best_x = candidates[order[0]].clone();
    let mut best_ei = ei_values[order[0]];

    // Coordinate search on the leaders: +/- step per dimension, halve the
    // step when stuck, budget ~REFINE_EVALS evaluations per leader.
    let rounds = (REFINE_EVALS / (2 * d)).max(1);
    for &start in order.iter().take(REFINE_TOP) {
        let mut x = candidates[start].clone();
        let mut fx = ei_values[start];
        let mut step = 0.05;
        for _ in 0..rounds {
            let mut proposals: Vec<Vec<f64>> = Vec::with_capacity(2 * d);
            for j in 0..d {
                for dir in [-1.0, 1.0] {
                    let mut p = x.clone();
                    p[j] = (p[j] + dir * step).clamp(-1.0, 1.0);
                    if clear_of_training(&p) {
                        proposals.push(p);
                    }
                }
            }
            if proposals.is_empty() {
                step *= 0.5;
                continue;
            }
            let m = DMatrix::from_fn(proposals.len(), d, |r, c| proposals[r][c]);
            let preds = predict(&m)?;
            let mut improved = false;
            for (p, pred) in proposals.iter().zip(&preds) {
                let ei = pred.ei(f_min)?;
                if ei > fx {
                    fx = ei;
                    x = p.clone();
                    improved = true;
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        if fx > best_ei {
            best_ei = fx;
            best_x = x;
        }
    }
    Ok((best_x, best_ei))
}

/// [`maximize_with`] over an ensemble posterior; returns x* in original units.
pub fn maximize_acquisition(
    ensemble: &Ensemble,
    dataset: &Dataset,
    incumbent: &Incumbent,
    seed: u64,
) -> Result<(Vec<f64>, f64), AdaptiveError> {
    let predict = |m: &DMatrix<f64>| -> Result<Vec<PredictiveDist>, AdaptiveError> {
        Ok(ensemble
            .posterior_batch(m)?
            .into_iter()
            .map(PredictiveDist::StudentT)
            .collect())
    };
    let (z, ei) = maximize_with(&predict, dataset, incumbent, seed)?;
    Ok((dataset.unscale_point(&z), ei))
}

pub(crate) fn run_loop<S, B>(
    problem: &Problem,
    settings: &RunSettings,
    build: B,
) -> Result<(RunState, S), AdaptiveError>
where
    S: Surrogate,
    B: Fn(&Dataset, usize) -> Result<S, AdaptiveError>,
{
    check_bounds(&problem.bounds)?;
    let d = problem.bounds.len();
    if !(settings.ei_tolerance > 0.0) {
        return Err(AdaptiveError::InvalidSettings(
            "ei_tolerance must be positive".into(),
        ));
    }
    let n_init = settings.n_init.unwrap_or_else(|| default_n_init(d));
    if n_init < 2 {
        return Err(AdaptiveError::InvalidSettings("n_init must be at least 2".into()));
    }
    let max_iterations = settings.max_iterations.unwrap_or(50 * d);

    let mut dataset = Dataset::new(problem.bounds.clone())?;
    let init_points: Vec<Vec<f64>> = match &settings.init_design {
        InitDesign::Lhs => lhs_design(n_init, d, settings.seed)
            .iter()
            .map(|z| dataset.unscale_point(z))
            .collect(),
        InitDesign::Explicit(points) => {
            if points.len() < 2 {
                return Err(AdaptiveError::InvalidSettings(
                    "explicit init design needs at least 2 points".into(),
                ));
            }
            points.clone()
        }
    };
    for x in init_points {
        let y = problem.evaluate_hf(&x);
        dataset.push(x, y)?;
    }
    let mut incumbent =
        Incumbent::from_observations(dataset.points().iter().map(|x| x.as_slice()).zip(
            dataset.targets().iter().copied(),
        ))
        .expect("dataset.push rejects non-finite responses");

    let mut history: Vec<IterationRecord> = Vec::new();
    let mut added = 0usize;
    let mut converged = false;
    let mut budget_exhausted = false;
    let mut surrogate = build(&dataset, 0)?;

    loop {
        if added >= max_iterations {
            budget_exhausted = true;
            break;
        }
        let (z_star, ei_star) = maximize_with(
            &|m| surrogate.predict_batch(m),
            &dataset,
            &incumbent,
            stream_seed(settings.seed, added, STREAM_MAXIMIZER),
        )?;
        if ei_star < settings.ei_tolerance * incumbent.y.abs().max(1.0) {
            converged = true;
            break;
        }
        let x_star = dataset.unscale_point(&z_star);
        let y = problem.evaluate_hf(&x_star);
        dataset.push(x_star.clone(), y)?;
        incumbent.observe(&x_star, y);
        added += 1;
        history.push(IterationRecord {
            iteration: added,
            x_added: x_star,
            hf_value: y,
            ei_star,
            f_min_after: incumbent.y,
            ensemble: surrogate.stats(),
        });
        surrogate = build(&dataset, added)?;
    }

    let final_stats = surrogate.stats();
    Ok((
        RunState {
            iteration: added,
            dataset,
            incumbent,
            history,
            converged,
            budget_exhausted,
            ei_tolerance: settings.ei_tolerance,
            max_iterations,
            final_stats,
        },
        surrogate,
    ))
}

/// Result of an ensemble-driven run: the loop state plus the last ensemble,
/// which is trained on the complete dataset.
#[derive(Debug)]
pub struct AdaptiveRun {
    pub state: RunState,
    pub ensemble: Ensemble,
}

/// Adaptive sampling with the E2NN ensemble surrogate. Each iteration
/// rebuilds the ensemble on the grown dataset, so runs are deterministic in
/// (seed, problem, settings).
///
/// Member seeds are fixed for the whole run: every rebuild regenerates the
/// same random hidden layers and refits their output layers on the new data.
/// Redrawing the features each iteration would roll a fresh disagreement
/// landscape every time, so the spread away from the data would never settle
/// and the loop would keep sampling regions it has already resolved.
pub fn run_adaptive(problem: &Problem, settings: &RunSettings) -> Result<AdaptiveRun, AdaptiveError> {
    let emulators = problem.scaled_emulators();
    let (state, surrogate) = run_loop(problem, settings, |ds, _iteration| {
        let mut cfg = settings.ensemble.clone();
        cfg.base_seed = settings
            .ensemble
            .base_seed
            .wrapping_add(stream_seed(settings.seed, 0, STREAM_ENSEMBLE));
        let ensemble = build_ensemble(&ds.scaled_matrix(), ds.targets(), &emulators, &cfg)?;
        Ok(EnsembleSurrogate(ensemble))
    })?;
    Ok(AdaptiveRun { state, ensemble: surrogate.0 })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceHeader {
    pub problem: String,
    pub method: String,
    pub seed: u64,
    pub bounds: Vec<(f64, f64)>,
    pub n_init: usize,
    pub ei_tolerance: f64,
    pub max_iterations: usize,
    /// Human-readable surrogate description (kernel, trend, recipe).
    pub surrogate: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceResult {
    pub converged: bool,
    pub budget_exhausted: bool,
    pub n_hf_samples: usize,
    pub best_x: Vec<f64>,
    pub best_y: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_ensemble: Option<EnsembleStats>,
}

impl RunState {
    pub fn result(&self) -> TraceResult {
        TraceResult {
            converged: self.converged,
            budget_exhausted: self.budget_exhausted,
            n_hf_samples: self.dataset.len(),
            best_x: self.incumbent.x.clone(),
            best_y: self.incumbent.y,
            final_ensemble: self.final_stats.clone(),
        }
    }
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TraceLine<'a> {
    Header(&'a TraceHeader),
    Iteration(&'a IterationRecord),
    Result(&'a TraceResult),
}

/// Streams the run as JSONL: one header line, one line per adaptive sample,
/// one result line. Field order and map ordering are fixed, so identical
/// runs serialize byte-identically.
pub fn write_trace<W: io::Write>(
    w: &mut W,
    header: &TraceHeader,
    state: &RunState,
) -> io::Result<()> {
    let mut emit = |line: TraceLine| -> io::Result<()> {
        let s = serde_json::to_string(&line).map_err(io::Error::other)?;
        writeln!(w, "{s}")
    };
    emit(TraceLine::Header(header))?;
    for record in &state.history {
        emit(TraceLine::Iteration(record))?;
    }
    emit(TraceLine::Result(&state.result()))
}
