use e2nn_ensemble::e2nn::Emulator;
use e2nn_ensemble::ensemble::{
    build_ensemble, conjugate_posterior, dataset_fingerprint, t_prediction_from_samples, Ensemble,
    EnsembleConfig, EnsembleError, MemberStatus, NixPrior,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PI: f64 = std::f64::consts::PI;

fn forrester_hf(x: f64) -> f64 {
    (6.0 * x - 2.0).powi(2) * (12.0 * x - 4.0).sin()
}

fn forrester_lf_scaled() -> Emulator {
    // Takes [-1,1]-scaled coordinates, like the training inputs below.
    Emulator::new("forrester_lf", |z: &[f64]| {
        let x = (z[0] + 1.0) / 2.0;
        0.5 * forrester_hf(x) + 10.0 * (x - 0.5) - 5.0
    })
}

fn forrester_data(n: usize) -> (DMatrix<f64>, Vec<f64>) {
    let x = DMatrix::from_fn(n, 1, |i, _| -1.0 + 2.0 * i as f64 / (n - 1) as f64);
    let y = (0..n).map(|i| forrester_hf((x[(i, 0)] + 1.0) / 2.0)).collect();
    (x, y)
}

fn sin40_data() -> (DMatrix<f64>, Vec<f64>) {
    let n = 20;
    let x = DMatrix::from_fn(n, 1, |i, _| -1.0 + 2.0 * i as f64 / (n - 1) as f64);
    let y = (0..n).map(|i| (40.0 * (x[(i, 0)] + 1.0) / 2.0).sin()).collect();
    (x, y)
}

#[test]
fn default_recipe_builds_sixteen_members_on_a_benign_target() {
    let (x, y) = forrester_data(8);
    let ens = build_ensemble(&x, &y, &[forrester_lf_scaled()], &EnsembleConfig::default()).unwrap();
    assert_eq!(ens.records().len(), 16);
    assert!(ens.len() >= 4, "only {} survivors", ens.len());
    // Member seeds are base_seed + index, in slot order.
    for (i, r) in ens.records().iter().enumerate() {
        assert_eq!(r.index, i);
        assert_eq!(r.seed, i as u64);
    }
    // Every survivor satisfies both stability filters.
    for r in ens.records().iter().filter(|r| r.status.is_retained()) {
        assert!(r.max_abs_weight <= 100.0);
        assert!(r.training_nrmse <= 1e-3);
    }
    // Benign multi-fidelity data should not trigger frequency escalation.
    assert_eq!(ens.escalations(), (0, 0));
    assert_eq!(ens.small_fourier_scale(), PI);
    assert_eq!(ens.large_fourier_scale(), PI / 2.0);
}

#[test]
fn posterior_predictive_fuses_member_predictions() {
    let (x, y) = forrester_data(8);
    let ens = build_ensemble(&x, &y, &[forrester_lf_scaled()], &EnsembleConfig::default()).unwrap();
    let preds = ens.member_predictions(&[0.21]).unwrap();
    let direct = t_prediction_from_samples(&preds).unwrap();
    let fused = ens.posterior_predictive(&[0.21]).unwrap();
    assert_eq!(direct, fused);
    assert_eq!(fused.dof, (ens.len() - 1) as f64);
    assert!(fused.dof >= 3.0);
    assert!(fused.scale > 0.0 && fused.scale.is_finite());

    // Batched fusion agrees with pointwise fusion up to gemm accumulation
    // order (different batch shapes take different matmul kernels).
    let grid = DMatrix::from_fn(9, 1, |i, _| -1.0 + 0.25 * i as f64);
    let batch = ens.posterior_batch(&grid).unwrap();
    for (i, b) in batch.iter().enumerate() {
        let single = ens.posterior_predictive(&[grid[(i, 0)]]).unwrap();
        assert!((b.mean - single.mean).abs() <= 1e-9 * (1.0 + single.mean.abs()));
        assert!((b.scale - single.scale).abs() <= 1e-9 * (1.0 + single.scale));
        assert_eq!(b.dof, single.dof);
    }
}

#[test]
fn ensemble_is_sharp_at_training_points() {
    let (x, y) = forrester_data(8);
    let ens = build_ensemble(&x, &y, &[forrester_lf_scaled()], &EnsembleConfig::default()).unwrap();
    // All survivors interpolate the data, so the fused mean sits on the
    // sample and the spread collapses.
    let p = ens.posterior_predictive(&[x[(3, 0)]]).unwrap();
    assert!((p.mean - y[3]).abs() < 1e-4, "mean {} vs sample {}", p.mean, y[3]);
    assert!(p.scale < 1e-3, "scale {} at a training point", p.scale);
}

#[test]
fn builds_are_deterministic() {
    let (x, y) = forrester_data(6);
    let cfg = EnsembleConfig { base_seed: 42, ..EnsembleConfig::default() };
    let a = build_ensemble(&x, &y, &[forrester_lf_scaled()], &cfg).unwrap();
    let b = build_ensemble(&x, &y, &[forrester_lf_scaled()], &cfg).unwrap();
    assert_eq!(
        serde_json::to_string(&a.manifest()).unwrap(),
        serde_json::to_string(&b.manifest()).unwrap()
    );
    let pa = a.posterior_predictive(&[0.123]).unwrap();
    let pb = b.posterior_predictive(&[0.123]).unwrap();
    assert_eq!(pa, pb);
}

#[test]
fn high_frequency_target_escalates_and_survives() {
    let (x, y) = sin40_data();
    let ens = build_ensemble(&x, &y, &[], &EnsembleConfig::default()).unwrap();
    let (es, el) = ens.escalations();
    assert!(es + el >= 1, "expected at least one Fourier escalation");
    assert!(ens.len() >= 4, "{} survivors", ens.len());
    // Scales grew geometrically from their defaults.
    assert!((ens.small_fourier_scale() - PI * 1.5f64.powi(es as i32)).abs() < 1e-12);
    assert!((ens.large_fourier_scale() - PI / 2.0 * 1.5f64.powi(el as i32)).abs() < 1e-12);
    for r in ens.records().iter().filter(|r| r.status.is_retained()) {
        assert!(r.max_abs_weight <= 100.0 && r.training_nrmse <= 1e-3);
    }
}

#[test]
fn collapse_reports_drop_reasons_with_weight_checked_first() {
    let (x, y) = sin40_data();
    // No escalation allowed: everything drops on this target.
    let cfg = EnsembleConfig { max_escalations: 0, ..EnsembleConfig::default() };
    let err = build_ensemble(&x, &y, &[], &cfg).unwrap_err();
    let EnsembleError::Collapse { retained, needed, records, .. } = err else {
        panic!("expected collapse, got {err}");
    };
    assert!(retained < needed);
    assert_eq!(records.len(), 16);
    for r in &records {
        match r.status {
            // Weight magnitude takes precedence: any record with oversized
            // weights must report them even if its fit is also poor.
            MemberStatus::DroppedWeightMagnitude { max_abs_weight } => {
                assert!(max_abs_weight > 100.0);
            }
            MemberStatus::DroppedNrmse { training_nrmse } => {
                assert!(r.max_abs_weight <= 100.0, "weight drop should have won");
                assert!(training_nrmse > 1e-3);
            }
            MemberStatus::Retained => {}
        }
    }
    assert!(records.iter().any(|r| matches!(r.status, MemberStatus::DroppedWeightMagnitude { .. })));

    // With the weight filter effectively disabled, the same members are
    // rejected for training fit instead.
    let cfg = EnsembleConfig {
        max_escalations: 0,
        weight_tolerance: 1e18,
        ..EnsembleConfig::default()
    };
    let err = build_ensemble(&x, &y, &[], &cfg).unwrap_err();
    let EnsembleError::Collapse { records, .. } = err else {
        panic!("expected collapse, got {err}");
    };
    assert!(records.iter().any(|r| matches!(r.status, MemberStatus::DroppedNrmse { .. })));
}

#[test]
fn manifest_roundtrip_rebuilds_an_identical_predictor() {
    let (x, y) = forrester_data(7);
    let emus = [forrester_lf_scaled()];
    let ens = build_ensemble(&x, &y, &emus, &EnsembleConfig::default()).unwrap();
    let json = serde_json::to_string_pretty(&ens.manifest()).unwrap();
    let manifest = serde_json::from_str(&json).unwrap();
    let rebuilt = Ensemble::from_manifest(&manifest, &emus).unwrap();
    assert_eq!(rebuilt.len(), ens.len());
    assert_eq!(rebuilt.dataset_fingerprint(), ens.dataset_fingerprint());
    let grid = DMatrix::from_fn(33, 1, |i, _| -1.0 + 2.0 * i as f64 / 32.0);
    let a = ens.posterior_batch(&grid).unwrap();
    let b = rebuilt.posterior_batch(&grid).unwrap();
    assert_eq!(a, b, "rebuilt ensemble must predict bitwise identically");

    let wrong = Ensemble::from_manifest(&manifest, &[Emulator::new("nope", |_: &[f64]| 0.0)]);
    assert!(wrong.is_err());
}

#[test]
fn fingerprint_tracks_data_changes() {
    let (x, y) = forrester_data(6);
    let f1 = dataset_fingerprint(&x, &y);
    assert_eq!(f1, dataset_fingerprint(&x, &y));
    let mut y2 = y.clone();
    y2[2] += 1e-12;
    assert_ne!(f1, dataset_fingerprint(&x, &y2));
}

#[test]
fn fused_prediction_matches_hand_computation() {
    // Samples 1..4: mean 2.5, variance 5/3, scale sqrt(5/4 * 5/3), dof 3.
    let p = t_prediction_from_samples(&[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert!((p.mean - 2.5).abs() < 1e-15);
    assert!((p.scale - (25.0f64 / 12.0).sqrt()).abs() < 1e-15);
    assert_eq!(p.dof, 3.0);
    assert_eq!(p.n_samples, 4);

    assert!(matches!(t_prediction_from_samples(&[1.0]), Err(EnsembleError::TooFewSamples(1))));
    assert!(matches!(
        t_prediction_from_samples(&[1.0, f64::NAN]),
        Err(EnsembleError::NonFiniteSamples(_))
    ));
}

#[test]
fn conjugate_posterior_matches_hand_computation() {
    // kappa0=2, mu0=1, nu0=3, sigma0^2=4 with samples [2,4]:
    // kappa_n=4, nu_n=5, mu_n=2, shrinkage=4, sigma_n^2=(12+2+4)/5.
    let prior = NixPrior { mu0: 1.0, kappa0: 2.0, nu0: 3.0, sigma0_sq: 4.0 };
    let post = conjugate_posterior(&prior, &[2.0, 4.0]).unwrap();
    assert!((post.kappa_n - 4.0).abs() < 1e-15);
    assert!((post.nu_n - 5.0).abs() < 1e-15);
    assert!((post.mu_n - 2.0).abs() < 1e-15);
    assert!((post.sigma_n_sq - 3.6).abs() < 1e-15);
    let pred = post.predictive().unwrap();
    assert!((pred.mean - 2.0).abs() < 1e-15);
    assert!((pred.scale - (1.25f64 * 3.6).sqrt()).abs() < 1e-15);
    assert_eq!(pred.dof, 5.0);
}

#[test]
fn uninformative_conjugate_route_equals_direct_fusion() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for n in [2usize, 4, 9, 16] {
        let samples: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let direct = t_prediction_from_samples(&samples).unwrap();
        let conj = conjugate_posterior(&NixPrior::uninformative(), &samples)
            .unwrap()
            .predictive()
            .unwrap();
        assert!((direct.mean - conj.mean).abs() <= 1e-12);
        assert!((direct.scale - conj.scale).abs() <= 1e-12);
        assert!((direct.dof - conj.dof).abs() <= 1e-12);
    }
}

#[test]
fn improper_posteriors_and_bad_priors_are_rejected() {
    // One observation under the uninformative prior: nu_n = 0, no predictive.
    let post = conjugate_posterior(&NixPrior::uninformative(), &[1.0]).unwrap();
    assert!(matches!(post.predictive(), Err(EnsembleError::ImproperPosterior { .. })));

    assert!(matches!(
        conjugate_posterior(&NixPrior { kappa0: -1.0, ..NixPrior::uninformative() }, &[1.0]),
        Err(EnsembleError::InvalidPrior(_))
    ));
    assert!(matches!(
        conjugate_posterior(&NixPrior::uninformative(), &[]),
        Err(EnsembleError::EmptySamples)
    ));
}

#[test]
fn coverage_of_the_predictive_interval_is_roughly_nominal() {
    // Light version of the full calibration study: draw n members and one
    // truth from the same normal; the 95% predictive interval should cover
    // the truth ~95% of the time.
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let n = 8;
    let trials = 4000;
    let mut covered = 0;
    for _ in 0..trials {
        let mut draw = || -> f64 {
            // Box-Muller from two uniforms.
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
        };
        let samples: Vec<f64> = (0..n).map(|_| 3.0 + 2.0 * draw()).collect();
        let truth = 3.0 + 2.0 * draw();
        let p = t_prediction_from_samples(&samples).unwrap();
        let lo = p.quantile(0.025).unwrap();
        let hi = p.quantile(0.975).unwrap();
        if (lo..=hi).contains(&truth) {
            covered += 1;
        }
    }
    let rate = covered as f64 / trials as f64;
    assert!((rate - 0.95).abs() < 0.03, "coverage {rate}");
}

#[test]
fn invalid_configurations_are_rejected() {
    let (x, y) = forrester_data(4);
    let bad = |cfg: EnsembleConfig| {
        matches!(build_ensemble(&x, &y, &[], &cfg), Err(EnsembleError::InvalidConfig(_)))
    };
    assert!(bad(EnsembleConfig { replicates: 0, ..EnsembleConfig::default() }));
    assert!(bad(EnsembleConfig { escalation_factor: 1.0, ..EnsembleConfig::default() }));
    assert!(bad(EnsembleConfig { min_members: 1, ..EnsembleConfig::default() }));
    assert!(bad(EnsembleConfig { activations: vec![], ..EnsembleConfig::default() }));
    assert!(bad(EnsembleConfig {
        architectures: vec![e2nn_ensemble::e2nn::ArchKind::Custom],
        ..EnsembleConfig::default()
    }));
    // A recipe too small for min_members is caught up front.
    assert!(bad(EnsembleConfig {
        replicates: 1,
        activations: vec![e2nn_ensemble::ensemble::ActivationTemplate::Swish],
        architectures: vec![e2nn_ensemble::e2nn::ArchKind::Small],
        ..EnsembleConfig::default()
    }));
}
