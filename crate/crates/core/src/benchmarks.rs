//! Analytic high/low-fidelity test pairs used by the examples and the CLI.

use std::fmt;
use std::sync::Arc;

use crate::e2nn::Emulator;

/// Location and value of a problem's global minimum.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub x: Vec<f64>,
    pub y: f64,
}

/// An analytic optimization problem: an expensive-to-pretend high-fidelity
/// function plus the cheap low-fidelity surrogates that get embedded as
/// emulators.
#[derive(Clone)]
pub struct BenchmarkProblem {
    pub name: &'static str,
    /// Per-dimension (lo, hi) box constraints.
    pub bounds: Vec<(f64, f64)>,
    pub hf: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    pub lf_list: Vec<Emulator>,
    pub known_optimum: Option<Optimum>,
}

impl BenchmarkProblem {
    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn evaluate_hf(&self, x: &[f64]) -> f64 {
        (self.hf)(x)
    }
}

impl fmt::Debug for BenchmarkProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BenchmarkProblem")
            .field("name", &self.name)
            .field("bounds", &self.bounds)
            .field("lf_list", &self.lf_list)
            .field("known_optimum", &self.known_optimum)
            .finish()
    }
}

fn forrester_hf(x: f64) -> f64 {
    let t = 6.0 * x - 2.0;
    t * t * (12.0 * x - 4.0).sin()
}

fn forrester_lf(x: f64) -> f64 {
    0.5 * forrester_hf(x) + 10.0 * (x - 0.5) - 5.0
}

/// The 1D Forrester function with its standard shifted/scaled low-fidelity
/// companion: y = (6x-2)^2 sin(12x-4), lf = y/2 + 10(x-1/2) - 5, on [0,1].
pub fn forrester_pair() -> BenchmarkProblem {
    BenchmarkProblem {
        name: "forrester",
        bounds: vec![(0.0, 1.0)],
        hf: Arc::new(|x: &[f64]| forrester_hf(x[0])),
        lf_list: vec![Emulator::new("forrester-lf", |x: &[f64]| forrester_lf(x[0]))],
        known_optimum: Some(Optimum {
            x: vec![0.7572487578418559],
            y: -6.020740055767083,
        }),
    }
}

fn nonstationary_hf(x1: f64, x2: f64) -> f64 {
    (21.0 * (x1 - 0.9).powi(4)).sin() * (2.0 * (x1 - 0.9)).cos()
        + (x1 - 0.7) / 2.0
        + 2.0 * x2 * x2 * (x1 * x2).sin()
}

fn nonstationary_lf(x1: f64, x2: f64) -> f64 {
    (nonstationary_hf(x1, x2) - 2.0 + x1 + x2) / (1.0 + 0.25 * x1 + 0.5 * x2)
}

/// A 2D function whose length scale varies sharply across the domain, with a
/// nonlinearly distorted low-fidelity companion. x1 in [0.05, 1.05], x2 in
/// [0, 1]. The minimum sits on the x2 = 0 edge; the pinned value comes from a
/// 2001x2001 grid sweep refined by a root find on the edge derivative.
pub fn nonstationary_2d_pair() -> BenchmarkProblem {
    BenchmarkProblem {
        name: "nonstationary2d",
        bounds: vec![(0.05, 1.05), (0.0, 1.0)],
        hf: Arc::new(|x: &[f64]| nonstationary_hf(x[0], x[1])),
        lf_list: vec![Emulator::new("nonstationary2d-lf", |x: &[f64]| {
            nonstationary_lf(x[0], x[1])
        })],
        known_optimum: Some(Optimum {
            x: vec![0.22117339715586512, 0.0],
            y: -0.4442010355413029,
        }),
    }
}

/// Controlled sanity problem where HF is an affine function of the embedded
/// LF: hf = 2*lf + 3 with lf = sum of coordinates. Every member interpolates
/// it from two points, so the ensemble spread collapses to zero.
pub fn linear_lf_sanity() -> BenchmarkProblem {
    BenchmarkProblem {
        name: "linear-sanity",
        bounds: vec![(0.0, 1.0)],
        hf: Arc::new(|x: &[f64]| 2.0 * x.iter().sum::<f64>() + 3.0),
        lf_list: vec![Emulator::new("sum-lf", |x: &[f64]| x.iter().sum::<f64>())],
        known_optimum: Some(Optimum { x: vec![0.0], y: 3.0 }),
    }
}

pub fn all_problems() -> Vec<BenchmarkProblem> {
    vec![forrester_pair(), nonstationary_2d_pair(), linear_lf_sanity()]
}

pub fn by_name(name: &str) -> Option<BenchmarkProblem> {
    all_problems().into_iter().find(|p| p.name == name)
}
