//! Ensembles of E2NN models with stability filtering and Student-t fusion.
//!
//! A build trains one model per (architecture, activation, replicate) cell,
//! drops members whose output weights explode or whose training fit is poor,
//! and — when most Fourier members of an architecture fail — raises that
//! architecture's Fourier frequency scale and retrains them. Surviving member
//! predictions at a point are treated as draws from a normal with unknown
//! mean and variance, whose posterior predictive is a location-scale
//! Student-t.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::e2nn::{
    ActivationKind, ArchKind, Architecture, E2nnError, E2nnModel, Emulator, ModelConfig,
    ModelDocument,
};
use crate::math::{self, MathError};

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("invalid ensemble configuration: {0}")]
    InvalidConfig(String),
    #[error("training member {index} failed")]
    MemberTraining {
        index: usize,
        #[source]
        source: E2nnError,
    },
    #[error(
        "ensemble collapsed: {retained} of {needed} required members survived \
         after {escalations_small} small / {escalations_large} large escalations"
    )]
    Collapse {
        retained: usize,
        needed: usize,
        escalations_small: u32,
        escalations_large: u32,
        /// Final per-member outcomes, for diagnosing what was dropped and why.
        records: Vec<MemberRecord>,
    },
    #[error("need at least 2 samples for a predictive distribution, got {0}")]
    TooFewSamples(usize),
    #[error("conjugate update needs at least one observation")]
    EmptySamples,
    #[error("{0} must be finite")]
    NonFiniteSamples(&'static str),
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("posterior is improper (kappa_n = {kappa_n}, nu_n = {nu_n}); add data")]
    ImproperPosterior { kappa_n: f64, nu_n: f64 },
    #[error("member prediction failed")]
    Prediction(#[from] E2nnError),
    #[error("manifest is inconsistent: {0}")]
    BadManifest(String),
}

/// Activation recipe entry; Fourier multipliers are applied on top of the
/// per-architecture frequency scale, so escalation moves all variants at once.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ActivationTemplate {
    Swish,
    Fourier { multiplier: f64 },
}

impl ActivationTemplate {
    fn instantiate(self, arch_scale: f64) -> ActivationKind {
        match self {
            ActivationTemplate::Swish => ActivationKind::Swish,
            ActivationTemplate::Fourier { multiplier } => {
                ActivationKind::Fourier { scale: multiplier * arch_scale }
            }
        }
    }

    fn is_fourier(self) -> bool {
        matches!(self, ActivationTemplate::Fourier { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    /// Models per (architecture, activation) cell.
    pub replicates: usize,
    /// Member `i` trains with seed `base_seed + i`.
    pub base_seed: u64,
    pub architectures: Vec<ArchKind>,
    pub activations: Vec<ActivationTemplate>,
    /// Initial Fourier frequency scale for the small architecture (about one
    /// oscillation across a [-1,1] domain given Glorot-sized weights).
    pub small_fourier_scale: f64,
    pub large_fourier_scale: f64,
    /// Multiplier applied to an architecture's Fourier scale on escalation.
    pub escalation_factor: f64,
    /// Maximum escalation rounds (per build, across both architectures).
    pub max_escalations: usize,
    /// Drop a member if any output weight magnitude exceeds this.
    pub weight_tolerance: f64,
    /// Drop a member if its training NRMSE exceeds this.
    pub nrmse_tolerance: f64,
    /// Relative singular-value cutoff for the output solve.
    pub rcond: f64,
    /// Fewer survivors than this is a collapse (4 keeps the predictive-t
    /// degrees of freedom at 3 or more).
    pub min_members: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            replicates: 2,
            base_seed: 0,
            architectures: vec![ArchKind::Small, ArchKind::Large],
            activations: vec![
                ActivationTemplate::Swish,
                ActivationTemplate::Fourier { multiplier: 1.0 },
                ActivationTemplate::Fourier { multiplier: 1.1 },
                ActivationTemplate::Fourier { multiplier: 1.2 },
            ],
            small_fourier_scale: std::f64::consts::PI,
            large_fourier_scale: std::f64::consts::FRAC_PI_2,
            escalation_factor: 1.5,
            max_escalations: 5,
            weight_tolerance: 100.0,
            nrmse_tolerance: 1e-3,
            rcond: math::DEFAULT_RCOND,
            min_members: 4,
        }
    }
}

impl EnsembleConfig {
    fn validate(&self) -> Result<(), EnsembleError> {
        let bad = |msg: String| Err(EnsembleError::InvalidConfig(msg));
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if self.architectures.is_empty() || self.activations.is_empty() {
            return bad("need at least one architecture and one activation".into());
        }
        if self.architectures.contains(&ArchKind::Custom) {
            return bad("the ensemble recipe only instantiates Small and Large architectures".into());
        }
        if !(self.small_fourier_scale > 0.0 && self.large_fourier_scale > 0.0) {
            return bad("Fourier scales must be positive".into());
        }
        if !(self.escalation_factor > 1.0) {
            return bad(format!("escalation factor must exceed 1, got {}", self.escalation_factor));
        }
        if !(self.weight_tolerance > 0.0 && self.nrmse_tolerance > 0.0) {
            return bad("stability tolerances must be positive".into());
        }
        if self.min_members < 2 {
            return bad("min_members below 2 cannot define a predictive spread".into());
        }
        if self.activations.iter().any(|a| match a {
            ActivationTemplate::Fourier { multiplier } => !(multiplier.is_finite() && *multiplier > 0.0),
            ActivationTemplate::Swish => false,
        }) {
            return bad("Fourier multipliers must be positive".into());
        }
        Ok(())
    }

    fn member_count(&self) -> usize {
        self.architectures.len() * self.activations.len() * self.replicates
    }
}

/// Why a trained member was kept or removed. Weight magnitude is checked
/// before training fit, so a member failing both reports the weight reason.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MemberStatus {
    Retained,
    DroppedWeightMagnitude { max_abs_weight: f64 },
    DroppedNrmse { training_nrmse: f64 },
}

impl MemberStatus {
    pub fn is_retained(&self) -> bool {
        matches!(self, MemberStatus::Retained)
    }
}

/// Final state of one member slot, as persisted in the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemberRecord {
    pub index: usize,
    pub seed: u64,
    pub architecture: ArchKind,
    pub activation: ActivationKind,
    pub status: MemberStatus,
    pub training_nrmse: f64,
    pub max_abs_weight: f64,
    /// Full model document for retained members only.
    pub model: Option<ModelDocument>,
}

#[derive(Debug, Clone)]
pub struct EnsembleMember {
    pub index: usize,
    pub seed: u64,
    model: E2nnModel,
}

impl EnsembleMember {
    pub fn model(&self) -> &E2nnModel {
        &self.model
    }
}

/// A stability-filtered set of trained models over one dataset.
#[derive(Debug, Clone)]
pub struct Ensemble {
    members: Vec<EnsembleMember>,
    records: Vec<MemberRecord>,
    config: EnsembleConfig,
    small_fourier_scale: f64,
    large_fourier_scale: f64,
    escalations_small: u32,
    escalations_large: u32,
    dataset_fingerprint: u64,
}

/// FNV-1a over the bit patterns of the training data, used to tie manifests
/// to the dataset they were built from.
pub fn dataset_fingerprint(inputs: &DMatrix<f64>, targets: &[f64]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET;
    let mut eat = |v: u64| {
        for byte in v.to_le_bytes() {
            hash ^= u64::from(byte);
            hash = hash.wrapping_mul(PRIME);
        }
    };
    eat(inputs.nrows() as u64);
    eat(inputs.ncols() as u64);
    for i in 0..inputs.nrows() {
        for j in 0..inputs.ncols() {
            eat(inputs[(i, j)].to_bits());
        }
    }
    for y in targets {
        eat(y.to_bits());
    }
    hash
}

struct Slot {
    index: usize,
    seed: u64,
    arch: ArchKind,
    template: ActivationTemplate,
    trained: Option<(E2nnModel, ActivationKind, f64, f64)>, // model, activation, nrmse, max|w|
}

fn slot_status(cfg: &EnsembleConfig, nrmse: f64, max_w: f64) -> MemberStatus {
    if !(max_w <= cfg.weight_tolerance) {
        MemberStatus::DroppedWeightMagnitude { max_abs_weight: max_w }
    } else if !(nrmse <= cfg.nrmse_tolerance) {
        MemberStatus::DroppedNrmse { training_nrmse: nrmse }
    } else {
        MemberStatus::Retained
    }
}

/// Trains the full member recipe on `(inputs, targets)`.
///
/// `inputs` are expected in the space the emulators accept (the adaptive loop
/// feeds `[-1,1]`-scaled coordinates and wraps its emulators to match).
pub fn build_ensemble(
    inputs: &DMatrix<f64>,
    targets: &[f64],
    emulators: &[Emulator],
    config: &EnsembleConfig,
) -> Result<Ensemble, EnsembleError> {
    config.validate()?;
    if config.member_count() < config.min_members {
        return Err(EnsembleError::InvalidConfig(format!(
            "recipe produces {} members but min_members is {}",
            config.member_count(),
            config.min_members
        )));
    }
    let n_train = targets.len();
    let input_dim = inputs.ncols();

    // Architecture-major, then activation, then replicate: member index and
    // therefore member seed do not depend on escalation history.
    let mut slots = Vec::with_capacity(config.member_count());
    for &arch in &config.architectures {
        for &template in &config.activations {
            for _ in 0..config.replicates {
                let index = slots.len();
                slots.push(Slot {
                    index,
                    seed: config.base_seed.wrapping_add(index as u64),
                    arch,
                    template,
                    trained: None,
                });
            }
        }
    }

    let mut scales = BTreeMap::from([
        (arch_key(ArchKind::Small), config.small_fourier_scale),
        (arch_key(ArchKind::Large), config.large_fourier_scale),
    ]);
    let mut escalations: BTreeMap<&'static str, u32> =
        BTreeMap::from([("small", 0), ("large", 0)]);

    let mut pending: Vec<usize> = (0..slots.len()).collect();
    let mut retry_rounds = 0;
    loop {
        for &slot_idx in &pending {
            let slot = &mut slots[slot_idx];
            let activation = slot.template.instantiate(scales[arch_key(slot.arch)]);
            let architecture = match slot.arch {
                ArchKind::Small => Architecture::small(n_train),
                ArchKind::Large => Architecture::large(),
                ArchKind::Custom => unreachable!("rejected by validate"),
            };
            let model_config = ModelConfig { input_dim, architecture, activation };
            let mut model = E2nnModel::new(model_config, emulators.to_vec(), slot.seed)
                .map_err(|source| EnsembleError::MemberTraining { index: slot.index, source })?;
            let report = model
                .train_last_layer(inputs, targets, config.rcond)
                .map_err(|source| EnsembleError::MemberTraining { index: slot.index, source })?;
            slot.trained = Some((model, activation, report.training_nrmse, report.max_abs_weight));
        }
        pending.clear();
        if retry_rounds >= config.max_escalations {
            break;
        }

        // Escalate an architecture when strictly more than half of its
        // Fourier members failed the stability filters; all of that
        // architecture's Fourier members then retrain at the new scale
        // (same seeds, higher frequency).
        for &arch in &[ArchKind::Small, ArchKind::Large] {
            let fourier: Vec<usize> = slots
                .iter()
                .filter(|s| s.arch == arch && s.template.is_fourier())
                .map(|s| s.index)
                .collect();
            if fourier.is_empty() {
                continue;
            }
            let dropped = fourier
                .iter()
                .filter(|&&i| {
                    let (_, _, nrmse, max_w) = slots[i].trained.as_ref().expect("trained");
                    !slot_status(config, *nrmse, *max_w).is_retained()
                })
                .count();
            if dropped * 2 > fourier.len() {
                let key = arch_key(arch);
                *scales.get_mut(key).unwrap() *= config.escalation_factor;
                *escalations.get_mut(key).unwrap() += 1;
                pending.extend(fourier);
            }
        }
        if pending.is_empty() {
            break;
        }
        retry_rounds += 1;
    }

    let mut members = Vec::new();
    let mut records = Vec::new();
    for slot in &slots {
        let (model, activation, nrmse, max_w) = slot.trained.as_ref().expect("all slots trained");
        let status = slot_status(config, *nrmse, *max_w);
        if status.is_retained() {
            members.push(EnsembleMember { index: slot.index, seed: slot.seed, model: model.clone() });
        }
        records.push(MemberRecord {
            index: slot.index,
            seed: slot.seed,
            architecture: slot.arch,
            activation: *activation,
            status,
            training_nrmse: *nrmse,
            max_abs_weight: *max_w,
            model: status.is_retained().then(|| model.to_document()),
        });
    }

    let ensemble = Ensemble {
        members,
        records,
        config: config.clone(),
        small_fourier_scale: scales["small"],
        large_fourier_scale: scales["large"],
        escalations_small: escalations["small"],
        escalations_large: escalations["large"],
        dataset_fingerprint: dataset_fingerprint(inputs, targets),
    };
    if ensemble.members.len() < config.min_members {
        return Err(EnsembleError::Collapse {
            retained: ensemble.members.len(),
            needed: config.min_members,
            escalations_small: ensemble.escalations_small,
            escalations_large: ensemble.escalations_large,
            records: ensemble.records,
        });
    }
    Ok(ensemble)
}

fn arch_key(kind: ArchKind) -> &'static str {
    match kind {
        ArchKind::Small => "small",
        ArchKind::Large => "large",
        ArchKind::Custom => "custom",
    }
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[EnsembleMember] {
        &self.members
    }

    /// Final state of every member slot, retained or dropped.
    pub fn records(&self) -> &[MemberRecord] {
        &self.records
    }

    pub fn config(&self) -> &EnsembleConfig {
        &self.config
    }

    pub fn small_fourier_scale(&self) -> f64 {
        self.small_fourier_scale
    }

    pub fn large_fourier_scale(&self) -> f64 {
        self.large_fourier_scale
    }

    pub fn escalations(&self) -> (u32, u32) {
        (self.escalations_small, self.escalations_large)
    }

    pub fn dataset_fingerprint(&self) -> u64 {
        self.dataset_fingerprint
    }

    /// Predictions of every retained member at one point.
    pub fn member_predictions(&self, x: &[f64]) -> Result<Vec<f64>, EnsembleError> {
        self.members
            .iter()
            .map(|m| m.model.predict(x).map_err(EnsembleError::from))
            .collect()
    }

    /// Student-t posterior predictive at one point.
    pub fn posterior_predictive(&self, x: &[f64]) -> Result<TPrediction, EnsembleError> {
        t_prediction_from_samples(&self.member_predictions(x)?)
    }

    /// Student-t posterior predictive at each input row. Member forward
    /// passes are batched; rows are fused independently.
    pub fn posterior_batch(&self, inputs: &DMatrix<f64>) -> Result<Vec<TPrediction>, EnsembleError> {
        let n = inputs.nrows();
        let mut per_member = Vec::with_capacity(self.members.len());
        for m in &self.members {
            per_member.push(m.model.predict_batch(inputs)?);
        }
        let mut out = Vec::with_capacity(n);
        let mut column = vec![0.0; self.members.len()];
        for i in 0..n {
            for (k, preds) in per_member.iter().enumerate() {
                column[k] = preds[i];
            }
            out.push(t_prediction_from_samples(&column)?);
        }
        Ok(out)
    }

    pub fn manifest(&self) -> EnsembleManifest {
        EnsembleManifest {
            config: self.config.clone(),
            dataset_fingerprint: format!("fnv1a:{:016x}", self.dataset_fingerprint),
            small_fourier_scale: self.small_fourier_scale,
            large_fourier_scale: self.large_fourier_scale,
            escalations_small: self.escalations_small,
            escalations_large: self.escalations_large,
            members: self.records.clone(),
        }
    }

    /// Rebuilds a predictable ensemble from a manifest. The emulators must be
    /// the ones the ensemble was trained with (member documents check names).
    pub fn from_manifest(
        manifest: &EnsembleManifest,
        emulators: &[Emulator],
    ) -> Result<Self, EnsembleError> {
        let fingerprint = manifest
            .dataset_fingerprint
            .strip_prefix("fnv1a:")
            .and_then(|h| u64::from_str_radix(h, 16).ok())
            .ok_or_else(|| {
                EnsembleError::BadManifest(format!(
                    "unparseable dataset fingerprint {:?}",
                    manifest.dataset_fingerprint
                ))
            })?;
        let mut members = Vec::new();
        for record in &manifest.members {
            if !record.status.is_retained() {
                continue;
            }
            let doc = record.model.as_ref().ok_or_else(|| {
                EnsembleError::BadManifest(format!("retained member {} has no model", record.index))
            })?;
            let model = E2nnModel::from_document(doc, emulators.to_vec())?;
            members.push(EnsembleMember { index: record.index, seed: record.seed, model });
        }
        if members.len() < manifest.config.min_members {
            return Err(EnsembleError::BadManifest(format!(
                "manifest retains {} members, below min_members {}",
                members.len(),
                manifest.config.min_members
            )));
        }
        Ok(Self {
            members,
            records: manifest.members.clone(),
            config: manifest.config.clone(),
            small_fourier_scale: manifest.small_fourier_scale,
            large_fourier_scale: manifest.large_fourier_scale,
            escalations_small: manifest.escalations_small,
            escalations_large: manifest.escalations_large,
            dataset_fingerprint: fingerprint,
        })
    }
}

/// Serializable record of a build: recipe, final Fourier scales, and the
/// per-member outcomes (with full model documents for survivors).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub config: EnsembleConfig,
    pub dataset_fingerprint: String,
    pub small_fourier_scale: f64,
    pub large_fourier_scale: f64,
    pub escalations_small: u32,
    pub escalations_large: u32,
    pub members: Vec<MemberRecord>,
}

/// A location-scale Student-t predictive distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TPrediction {
    pub mean: f64,
    pub scale: f64,
    pub dof: f64,
    /// Number of samples the distribution was fused from.
    pub n_samples: usize,
}

impl TPrediction {
    /// Quantile of the predictive distribution.
    pub fn quantile(&self, p: f64) -> Result<f64, MathError> {
        Ok(self.mean + self.scale * math::t_quantile(p, self.dof)?)
    }
}

/// Fuses point predictions into the posterior predictive for a normal with
/// unknown mean and variance under the standard uninformative prior:
/// `t_{n-1}(mean = sample mean, scale^2 = (1 + n)/n * sample variance)`.
pub fn t_prediction_from_samples(samples: &[f64]) -> Result<TPrediction, EnsembleError> {
    let n = samples.len();
    if n < 2 {
        return Err(EnsembleError::TooFewSamples(n));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(EnsembleError::NonFiniteSamples("samples"));
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let ss: f64 = samples.iter().map(|v| (v - mean) * (v - mean)).sum();
    let sample_var = ss / (nf - 1.0);
    Ok(TPrediction {
        mean,
        scale: ((1.0 + nf) / nf * sample_var).sqrt(),
        dof: nf - 1.0,
        n_samples: n,
    })
}

/// Normal-inverse-chi-squared prior for a normal with unknown mean and
/// variance. `uninformative()` is the improper limit whose posterior
/// predictive coincides with [`t_prediction_from_samples`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NixPrior {
    pub mu0: f64,
    pub kappa0: f64,
    pub nu0: f64,
    pub sigma0_sq: f64,
}

impl NixPrior {
    pub fn uninformative() -> Self {
        Self { mu0: 0.0, kappa0: 0.0, nu0: -1.0, sigma0_sq: 0.0 }
    }

    fn validate(&self) -> Result<(), EnsembleError> {
        if !(self.kappa0 >= 0.0 && self.kappa0.is_finite()) {
            return Err(EnsembleError::InvalidPrior(format!("kappa0 = {}", self.kappa0)));
        }
        if !(self.sigma0_sq >= 0.0 && self.sigma0_sq.is_finite()) {
            return Err(EnsembleError::InvalidPrior(format!("sigma0_sq = {}", self.sigma0_sq)));
        }
        if !self.mu0.is_finite() || !self.nu0.is_finite() {
            return Err(EnsembleError::InvalidPrior("mu0 and nu0 must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NixPosterior {
    pub mu_n: f64,
    pub kappa_n: f64,
    pub nu_n: f64,
    pub sigma_n_sq: f64,
}

/// Conjugate update of a [`NixPrior`] with observed samples.
pub fn conjugate_posterior(prior: &NixPrior, samples: &[f64]) -> Result<NixPosterior, EnsembleError> {
    prior.validate()?;
    let n = samples.len();
    if n == 0 {
        return Err(EnsembleError::EmptySamples);
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(EnsembleError::NonFiniteSamples("samples"));
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let ss: f64 = samples.iter().map(|v| (v - mean) * (v - mean)).sum();

    let kappa_n = prior.kappa0 + nf;
    let nu_n = prior.nu0 + nf;
    let mu_n = (prior.kappa0 * prior.mu0 + nf * mean) / kappa_n;
    let shrink = if prior.kappa0 == 0.0 {
        0.0 // no prior pseudo-observations, no shrinkage term
    } else {
        nf * prior.kappa0 / (prior.kappa0 + nf) * (prior.mu0 - mean) * (prior.mu0 - mean)
    };
    let sigma_n_sq = (prior.nu0 * prior.sigma0_sq + ss + shrink) / nu_n;
    Ok(NixPosterior { mu_n, kappa_n, nu_n, sigma_n_sq })
}

impl NixPosterior {
    /// Posterior predictive for one future observation:
    /// `t_{nu_n}(mu_n, (1 + kappa_n)/kappa_n * sigma_n_sq)`.
    pub fn predictive(&self) -> Result<TPrediction, EnsembleError> {
        if !(self.kappa_n > 0.0 && self.nu_n > 0.0) {
            return Err(EnsembleError::ImproperPosterior { kappa_n: self.kappa_n, nu_n: self.nu_n });
        }
        Ok(TPrediction {
            mean: self.mu_n,
            scale: ((1.0 + self.kappa_n) / self.kappa_n * self.sigma_n_sq).sqrt(),
            dof: self.nu_n,
            n_samples: 0,
        })
    }
}
