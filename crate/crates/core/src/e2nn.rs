//! Emulator-embedded neural network with random frozen hidden weights.
//!
//! Hidden layers are never trained: weights come from a seeded Glorot draw and
//! stay fixed, so fitting a model is a single linear solve for the output
//! layer. Every hidden layer is widened with the (standardized) outputs of the
//! low-fidelity emulators, which lets the linear solve ride on the emulator
//! trend and spend the random features on the discrepancy.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{self, MathError};

/// A low-fidelity model embedded into the network: any cheap map from the
/// model's input space to a scalar.
#[derive(Clone)]
pub struct Emulator {
    name: String,
    eval: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl Emulator {
    pub fn new(name: impl Into<String>, eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self { name: name.into(), eval: Arc::new(eval) }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }
}

impl fmt::Debug for Emulator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Emulator").field("name", &self.name).finish()
    }
}

#[derive(Debug, Error)]
pub enum E2nnError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("expected inputs with {expected} columns, got {got}")]
    InputDim { expected: usize, got: usize },
    #[error("{0} contain non-finite values")]
    NonFinite(&'static str),
    #[error("{rows} input rows but {targets} targets")]
    TargetLength { rows: usize, targets: usize },
    #[error("training set is empty")]
    EmptyTraining,
    #[error("model has not been trained")]
    Untrained,
    #[error("document lists emulators {expected:?} but {got:?} were supplied")]
    EmulatorMismatch { expected: Vec<String>, got: Vec<String> },
    #[error("training solve failed: {0}")]
    Solve(#[from] MathError),
}

/// Nonlinearity applied to each hidden neuron's preactivation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ActivationKind {
    /// `x * sigmoid(x)`: smooth, unbounded, good general-purpose default.
    Swish,
    /// `sin(scale * x)`: oscillatory features for low-dissipation targets.
    /// Larger scales resolve higher frequencies.
    Fourier { scale: f64 },
}

impl ActivationKind {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            ActivationKind::Swish => v / (1.0 + (-v).exp()),
            ActivationKind::Fourier { scale } => (scale * v).sin(),
        }
    }
}

/// Named layer layouts. `Small` and `Large` are the two shapes the ensemble
/// recipe instantiates; `Custom` covers everything else.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArchKind {
    Small,
    Large,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub kind: ArchKind,
    /// Widths of the hidden layers, input side first (emulator neurons are
    /// appended to each layer on top of these widths).
    pub hidden_sizes: Vec<usize>,
}

impl Architecture {
    /// One hidden layer, twice as wide as the training set.
    pub fn small(n_train: usize) -> Self {
        Self { kind: ArchKind::Small, hidden_sizes: vec![2 * n_train.max(1)] }
    }

    /// Two hidden layers, 200 then 5000 neurons.
    pub fn large() -> Self {
        Self { kind: ArchKind::Large, hidden_sizes: vec![200, 5000] }
    }

    pub fn custom(hidden_sizes: Vec<usize>) -> Self {
        Self { kind: ArchKind::Custom, hidden_sizes }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub architecture: Architecture,
    pub activation: ActivationKind,
}

/// Affine standardizer: maps `v` to `(v - mean) / std`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: f64,
    pub std: f64,
}

impl Scaler {
    pub const IDENTITY: Scaler = Scaler { mean: 0.0, std: 1.0 };

    /// Population statistics with a floor on the spread so constant streams
    /// standardize to zero instead of dividing by zero.
    fn fit(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        Scaler { mean, std: if std < 1e-12 { 1.0 } else { std } }
    }

    #[inline]
    pub fn standardize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    #[inline]
    pub fn destandardize(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

#[derive(Debug, Clone)]
struct Layer {
    /// fan_in x width; a layer's fan-in includes the emulator columns
    /// appended to the previous layer.
    weights: DMatrix<f64>,
    biases: DVector<f64>,
}

#[derive(Debug, Clone)]
struct TrainedOutput {
    weights: DVector<f64>,
    training_nrmse: f64,
    max_abs_weight: f64,
}

/// Diagnostics from a last-layer fit.
#[derive(Debug, Clone, Copy)]
pub struct TrainingReport {
    /// NRMSE of the fit on its own training set (0 = interpolation).
    pub training_nrmse: f64,
    /// Largest output-weight magnitude, in standardized-target units.
    pub max_abs_weight: f64,
}

#[derive(Debug, Clone)]
pub struct E2nnModel {
    config: ModelConfig,
    seed: u64,
    emulators: Vec<Emulator>,
    layers: Vec<Layer>,
    emulator_scalers: Vec<Scaler>,
    target_scaler: Scaler,
    output: Option<TrainedOutput>,
}

impl E2nnModel {
    /// Draws the frozen hidden weights for `config` from `seed`.
    ///
    /// Draw order is part of the on-disk format (documents store only the
    /// seed): per layer, weights in column-major order from a Glorot normal
    /// `N(0, 2/(fan_in + fan_out))`, then biases — uniform on `[0, 2pi)` for
    /// Fourier activations (a phase), uniform on `[-4, 4)` for Swish.
    pub fn new(config: ModelConfig, emulators: Vec<Emulator>, seed: u64) -> Result<Self, E2nnError> {
        if config.input_dim == 0 {
            return Err(E2nnError::InvalidConfig("input_dim must be at least 1".into()));
        }
        if config.architecture.hidden_sizes.is_empty() {
            return Err(E2nnError::InvalidConfig("at least one hidden layer is required".into()));
        }
        if config.architecture.hidden_sizes.iter().any(|&w| w == 0) {
            return Err(E2nnError::InvalidConfig("hidden layer widths must be positive".into()));
        }
        if let ActivationKind::Fourier { scale } = config.activation {
            if !(scale > 0.0 && scale.is_finite()) {
                return Err(E2nnError::InvalidConfig(format!("Fourier scale must be positive, got {scale}")));
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_emu = emulators.len();
        let mut layers = Vec::with_capacity(config.architecture.hidden_sizes.len());
        let mut fan_in = config.input_dim;
        for &width in &config.architecture.hidden_sizes {
            let glorot = Normal::new(0.0, (2.0 / (fan_in + width) as f64).sqrt())
                .expect("positive stddev");
            let mut weights = DMatrix::zeros(fan_in, width);
            for c in 0..width {
                for r in 0..fan_in {
                    weights[(r, c)] = glorot.sample(&mut rng);
                }
            }
            let bias_dist = match config.activation {
                ActivationKind::Fourier { .. } => Uniform::new(0.0, 2.0 * std::f64::consts::PI),
                ActivationKind::Swish => Uniform::new(-4.0, 4.0),
            };
            let mut biases = DVector::zeros(width);
            for b in biases.iter_mut() {
                *b = bias_dist.sample(&mut rng);
            }
            layers.push(Layer { weights, biases });
            fan_in = width + n_emu;
        }

        Ok(Self {
            config,
            seed,
            emulator_scalers: vec![Scaler::IDENTITY; n_emu],
            target_scaler: Scaler::IDENTITY,
            emulators,
            layers,
            output: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_trained(&self) -> bool {
        self.output.is_some()
    }

    /// Frozen weights and biases of hidden layer `idx` (for diagnostics).
    pub fn hidden_layer(&self, idx: usize) -> Option<(&DMatrix<f64>, &DVector<f64>)> {
        self.layers.get(idx).map(|l| (&l.weights, &l.biases))
    }

    pub fn training_report(&self) -> Option<TrainingReport> {
        self.output.as_ref().map(|o| TrainingReport {
            training_nrmse: o.training_nrmse,
            max_abs_weight: o.max_abs_weight,
        })
    }

    fn check_inputs(&self, inputs: &DMatrix<f64>) -> Result<(), E2nnError> {
        if inputs.ncols() != self.config.input_dim {
            return Err(E2nnError::InputDim { expected: self.config.input_dim, got: inputs.ncols() });
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(E2nnError::NonFinite("inputs"));
        }
        Ok(())
    }

    /// Evaluates every emulator on every input row and standardizes columns.
    fn emulator_columns(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>, E2nnError> {
        let n = inputs.nrows();
        let mut cols = DMatrix::zeros(n, self.emulators.len());
        let mut row = vec![0.0; self.config.input_dim];
        for i in 0..n {
            for (k, v) in row.iter_mut().enumerate() {
                *v = inputs[(i, k)];
            }
            for (j, emu) in self.emulators.iter().enumerate() {
                cols[(i, j)] = self.emulator_scalers[j].standardize(emu.evaluate(&row));
            }
        }
        if cols.iter().any(|v| !v.is_finite()) {
            return Err(E2nnError::NonFinite("emulator outputs"));
        }
        Ok(cols)
    }

    /// Runs the frozen layers and returns the design matrix for the linear
    /// output fit: `[last hidden activations | emulator columns | 1]`.
    pub fn hidden_features(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>, E2nnError> {
        self.check_inputs(inputs)?;
        let n = inputs.nrows();
        let emu_cols = self.emulator_columns(inputs)?;
        let n_emu = emu_cols.ncols();

        let mut h = inputs.clone_owned();
        for layer in &self.layers {
            let width = layer.weights.ncols();
            let mut pre = &h * &layer.weights;
            for (c, mut col) in pre.column_iter_mut().enumerate() {
                col.add_scalar_mut(layer.biases[c]);
            }
            pre.apply(|v| *v = self.config.activation.apply(*v));
            let mut next = DMatrix::zeros(n, width + n_emu);
            next.view_mut((0, 0), (n, width)).copy_from(&pre);
            next.view_mut((0, width), (n, n_emu)).copy_from(&emu_cols);
            h = next;
        }

        let mut features = DMatrix::zeros(n, h.ncols() + 1);
        features.view_mut((0, 0), (n, h.ncols())).copy_from(&h);
        features.view_mut((0, h.ncols()), (n, 1)).fill(1.0);
        if features.iter().any(|v| !v.is_finite()) {
            return Err(E2nnError::NonFinite("hidden features"));
        }
        Ok(features)
    }

    /// Fits the output layer by minimum-norm least squares on standardized
    /// targets. Refits the emulator and target standardizers from this
    /// training set first, so retraining on new data is self-contained.
    pub fn train_last_layer(
        &mut self,
        inputs: &DMatrix<f64>,
        targets: &[f64],
        rcond: f64,
    ) -> Result<TrainingReport, E2nnError> {
        if inputs.nrows() == 0 {
            return Err(E2nnError::EmptyTraining);
        }
        if inputs.nrows() != targets.len() {
            return Err(E2nnError::TargetLength { rows: inputs.nrows(), targets: targets.len() });
        }
        if targets.iter().any(|v| !v.is_finite()) {
            return Err(E2nnError::NonFinite("targets"));
        }
        self.check_inputs(inputs)?;

        let mut row = vec![0.0; self.config.input_dim];
        let mut emu_values = vec![0.0; inputs.nrows()];
        for j in 0..self.emulators.len() {
            for i in 0..inputs.nrows() {
                for (k, v) in row.iter_mut().enumerate() {
                    *v = inputs[(i, k)];
                }
                emu_values[i] = self.emulators[j].evaluate(&row);
            }
            if emu_values.iter().any(|v| !v.is_finite()) {
                return Err(E2nnError::NonFinite("emulator outputs"));
            }
            self.emulator_scalers[j] = Scaler::fit(&emu_values);
        }
        self.target_scaler = Scaler::fit(targets);

        let features = self.hidden_features(inputs)?;
        let z = DVector::from_iterator(
            targets.len(),
            targets.iter().map(|&y| self.target_scaler.standardize(y)),
        );
        let sol = math::pinv_solve(&features, &z, rcond)?;
        let report = TrainingReport {
            training_nrmse: sol.residual_nrmse,
            max_abs_weight: sol.max_abs_weight,
        };
        self.output = Some(TrainedOutput {
            weights: sol.weights,
            training_nrmse: sol.residual_nrmse,
            max_abs_weight: sol.max_abs_weight,
        });
        Ok(report)
    }

    pub fn predict_batch(&self, inputs: &DMatrix<f64>) -> Result<Vec<f64>, E2nnError> {
        let output = self.output.as_ref().ok_or(E2nnError::Untrained)?;
        let features = self.hidden_features(inputs)?;
        let z = features * &output.weights;
        Ok(z.iter().map(|&v| self.target_scaler.destandardize(v)).collect())
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, E2nnError> {
        let inputs = DMatrix::from_row_slice(1, x.len(), x);
        Ok(self.predict_batch(&inputs)?[0])
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            config: self.config.clone(),
            seed: self.seed,
            emulator_names: self.emulators.iter().map(|e| e.name.clone()).collect(),
            emulator_scalers: self.emulator_scalers.clone(),
            target_scaler: self.target_scaler,
            output: self.output.as_ref().map(|o| TrainedOutputDocument {
                weights: o.weights.iter().copied().collect(),
                training_nrmse: o.training_nrmse,
                max_abs_weight: o.max_abs_weight,
            }),
        }
    }

    /// Rebuilds a model from its document: hidden weights are re-drawn from
    /// the stored seed, so the supplied emulators must be the ones the
    /// document was saved with (checked by name).
    pub fn from_document(doc: &ModelDocument, emulators: Vec<Emulator>) -> Result<Self, E2nnError> {
        let got: Vec<String> = emulators.iter().map(|e| e.name.clone()).collect();
        if got != doc.emulator_names {
            return Err(E2nnError::EmulatorMismatch { expected: doc.emulator_names.clone(), got });
        }
        let mut model = Self::new(doc.config.clone(), emulators, doc.seed)?;
        if doc.emulator_scalers.len() != model.emulator_scalers.len() {
            return Err(E2nnError::InvalidConfig(format!(
                "document has {} emulator scalers for {} emulators",
                doc.emulator_scalers.len(),
                model.emulator_scalers.len()
            )));
        }
        model.emulator_scalers = doc.emulator_scalers.clone();
        model.target_scaler = doc.target_scaler;
        model.output = doc.output.as_ref().map(|o| TrainedOutput {
            weights: DVector::from_column_slice(&o.weights),
            training_nrmse: o.training_nrmse,
            max_abs_weight: o.max_abs_weight,
        });
        Ok(model)
    }
}

/// Serializable form of a model: configuration, seed, and fitted parameters.
/// Hidden weights are reproduced from the seed on load rather than stored.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDocument {
    pub config: ModelConfig,
    pub seed: u64,
    pub emulator_names: Vec<String>,
    pub emulator_scalers: Vec<Scaler>,
    pub target_scaler: Scaler,
    pub output: Option<TrainedOutputDocument>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedOutputDocument {
    pub weights: Vec<f64>,
    pub training_nrmse: f64,
    pub max_abs_weight: f64,
}
