//! Emulator-embedded random neural network (E2NN) ensembles for adaptive sampling.
//!
//! The pieces, bottom up:
//!
//! - [`math`]: truncated-SVD least squares, ridge regression, NRMSE, and the
//!   normal / Student-t densities, CDFs and quantiles everything above leans on.
//! - [`e2nn`]: a feed-forward network whose hidden layers are augmented with
//!   low-fidelity emulator outputs; hidden weights are random and frozen, only
//!   the last layer is fit (by minimum-norm least squares).
//! - [`ensemble`]: builds a diverse set of such networks (activations ×
//!   architectures × replicates), drops unstable members, escalates Fourier
//!   activation scales when too many members fail, and fuses survivors into a
//!   Student-t predictive distribution.
//! - [`acquisition`]: expected improvement under Gaussian and Student-t
//!   predictions, plus a quadrature oracle used by the tests.
//! - [`adaptive`]: Latin hypercube initialization, an EI maximizer, and the
//!   sampling loop that alternates ensemble builds with HF evaluations.
//! - [`gpr`]: an ordinary-kriging Gaussian process used both as the baseline
//!   optimizer and as a drop-in low-fidelity emulator.
//! - [`benchmarks`]: analytic multi-fidelity problems addressable by name.

pub use nalgebra;

pub mod acquisition;
pub mod adaptive;
pub mod benchmarks;
pub mod e2nn;
pub mod ensemble;
pub mod gpr;
pub mod math;

pub use acquisition::{ei_gaussian, ei_student_t, AcquisitionError, Incumbent, PredictiveDist};
pub use adaptive::{
    maximize_acquisition, run_adaptive, write_trace, AdaptiveError, AdaptiveRun, Dataset, Problem,
    RunSettings, RunState,
};
pub use benchmarks::{all_problems, by_name, BenchmarkProblem};
pub use e2nn::{ArchKind, E2nnError, E2nnModel, Emulator, ModelConfig};
pub use ensemble::{build_ensemble, Ensemble, EnsembleConfig, EnsembleError, TPrediction};
pub use gpr::{gpr_fit, run_ego, GprError, GprModel, GprSettings};
