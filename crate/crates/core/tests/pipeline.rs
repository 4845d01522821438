use std::sync::Arc;

use polydich::dichotomy::{check_contraction, fit_constants, fit_nonuniform_constants, verify_equivariance};
use polydich::io::to_canonical_string;
use polydich::robustness::{
    gronwall_growth_check, operator_gap, perturb, robustness_experiment, GronwallConstants, RobustnessOptions,
};
use polydich::{
    certify, make_generator, BaseNorm, Cocycle, DichotomyOptions, GeneratorSpec, NormSequence, PerturbationSpec,
    Regime, Splitting,
};
use serde_json::json;

fn cocycle(kind: &str, params: serde_json::Value, d: usize, horizon: usize) -> Arc<Cocycle> {
    Arc::new(Cocycle::new(Arc::new(
        make_generator(&GeneratorSpec::new(kind, params), d, horizon).unwrap(),
    )))
}

fn quick() -> DichotomyOptions {
    DichotomyOptions {
        admissibility: false,
        ..DichotomyOptions::default()
    }
}

#[test]
fn nonuniform_generator_epsilon_is_recovered() {
    for eps in [0.2, 0.4] {
        let c = cocycle("nonuniform-diagonal", json!({"lambda": 1.0, "epsilon": eps}), 2, 1024);
        let split = Splitting::axis(2, 1024, 1).unwrap();
        let fit = fit_nonuniform_constants(&c, BaseNorm::Euclidean, &split, &quick()).unwrap();
        assert!(
            (0.8 * eps..=1.2 * eps).contains(&fit.epsilon),
            "eps0 = {eps}: fitted {}",
            fit.epsilon
        );
    }
    let uniform = cocycle("diagonal-poly", json!({"lambda": 1.0}), 2, 256);
    let split = Splitting::axis(2, 256, 1).unwrap();
    let fit = fit_nonuniform_constants(&uniform, BaseNorm::Euclidean, &split, &quick()).unwrap();
    assert!(fit.epsilon < 1e-9);
}

#[test]
fn adapted_strong_constant_is_at_most_two() {
    let c = cocycle("diagonal-poly", json!({"lambda": 1.0}), 2, 128);
    let split = Arc::new(Splitting::axis(2, 128, 1).unwrap());
    let ns = NormSequence::adapted_strong(Arc::clone(&c), Arc::clone(&split), 1.0, 1.0, BaseNorm::Euclidean, 128).unwrap();
    let fit = fit_constants(&c, &ns, &split, &quick()).unwrap();
    assert!(fit.d <= 2.0 + 1e-9, "D = {}", fit.d);
}

#[test]
fn certified_triangular_systems_are_equivariant() {
    for seed in 0..8u64 {
        let c = cocycle(
            "triangular-poly",
            json!({"exponents": [-1.2, -0.6, 0.9], "seed": seed, "rotate": true}),
            3,
            64,
        );
        let cert = certify(Arc::clone(&c), &NormSequence::euclidean(), &quick()).unwrap();
        assert!(verify_equivariance(cert.splitting(), &c) <= 1e-8);
        assert!(cert.residuals.transversality > 1e-6);
        assert!(cert.residuals.invariance <= 1e-6);
        assert_eq!(cert.stable_dim, 2);
    }
}

#[test]
fn certificate_json_is_reproducible() {
    let run = || {
        let c = cocycle("triangular-poly", json!({"exponents": [-1.0, 1.0], "seed": 4}), 2, 128);
        to_canonical_string(&certify(c, &NormSequence::euclidean(), &DichotomyOptions::default()).unwrap().to_json())
    };
    assert_eq!(run(), run());
}

#[test]
fn block_model_stable_dimension() {
    let c = cocycle(
        "block-lyapunov",
        json!({
            "stable": {"kind": "diagonal-poly", "dimension": 1, "params": {"exponents": [-0.8]}},
            "unstable": {"kind": "diagonal-poly", "dimension": 2, "params": {"exponents": [0.6, 1.1]}},
        }),
        3,
        256,
    );
    let cert = certify(c, &NormSequence::euclidean(), &quick()).unwrap();
    assert_eq!(cert.stable_dim, 1);
    assert!(cert.flags.dichotomy);
}

#[test]
fn identity_probe_grows_like_harmonic_sums() {
    let c = cocycle("identity", json!({}), 1, 256);
    let ev = check_contraction(&c, &NormSequence::euclidean(), &quick()).unwrap();
    assert!(!ev.holds);
    let sups: Vec<f64> = ev.probe_sup.iter().map(|p| p.1).collect();
    // H_N - 1 grows by about log 2 per doubling
    for w in sups.windows(2) {
        assert!((w[1] - w[0] - 2f64.ln()).abs() < 0.05, "{sups:?}");
    }
}

#[test]
fn saturated_perturbation_gap_is_dominated_in_adapted_norms() {
    let seq = make_generator(&GeneratorSpec::new("diagonal-poly", json!({"lambda": 1.0})), 2, 128).unwrap();
    let a = Arc::new(Cocycle::new(Arc::new(seq.clone())));
    let split = Arc::new(Splitting::axis(2, 128, 1).unwrap());
    // exact diagonal dichotomy: D = 1, so norm equivalence holds with C = 2
    let ns = NormSequence::adapted_nonuniform(Arc::clone(&a), split, 1.0, BaseNorm::Euclidean, 128)
        .unwrap()
        .with_equivalence(2.0, 0.0);
    let z = polydich::Matrix::from_column_slice(2, 1, &[0.0, 1.0]);
    for seed in 0..4 {
        let spec = PerturbationSpec::new(0.1, 0.0, Regime::Strong, seed);
        let b = Arc::new(Cocycle::new(Arc::new(perturb(&seq, &spec, None).unwrap())));
        let gap = operator_gap(&a, &b, &ns, &z, &spec).unwrap();
        assert!(gap.empirical_gap <= gap.gap_bound, "{gap:?}");
        assert!(gap.pointwise_ok);
    }
}

#[test]
fn gronwall_envelope_holds_with_slack() {
    let seq = make_generator(&GeneratorSpec::new("diagonal-poly", json!({"lambda": 1.0})), 2, 128).unwrap();
    let spec = PerturbationSpec::new(0.05, 0.0, Regime::Strong, 1);
    let b = Cocycle::new(Arc::new(perturb(&seq, &spec, None).unwrap()));
    let consts = GronwallConstants {
        m: 1.0,
        a: 1.0,
        c_norm: 1.0,
        c: 0.05,
    };
    let r = gronwall_growth_check(&b, &NormSequence::euclidean(), &consts).unwrap();
    assert!(r.ok && r.product_ok);
    assert!(r.worst_ratio < 1.0);
}

#[test]
fn perturbed_constants_converge_as_budget_shrinks() {
    let seq = Arc::new(make_generator(&GeneratorSpec::new("diagonal-poly", json!({"lambda": 1.0})), 2, 128).unwrap());
    let opts = RobustnessOptions {
        seeds: vec![0, 1, 2, 3],
        ..RobustnessOptions::default()
    };
    let deviation = |c: f64| {
        let r = robustness_experiment(Arc::clone(&seq), &PerturbationSpec::new(c, 0.0, Regime::Strong, 0), &opts).unwrap();
        r.seeds.iter().map(|s| s.deviation).fold(0.0, f64::max)
    };
    let devs: Vec<f64> = [0.2, 0.1, 0.05, 0.025].iter().map(|&c| deviation(c)).collect();
    for w in devs.windows(2) {
        assert!(w[1] <= w[0] + 1e-6, "{devs:?}");
    }
}

#[test]
fn weak_regime_does_not_claim_strong() {
    let seq = Arc::new(make_generator(&GeneratorSpec::new("diagonal-poly", json!({"lambda": 1.0})), 2, 64).unwrap());
    let opts = RobustnessOptions {
        seeds: vec![0],
        ..RobustnessOptions::default()
    };
    let r = robustness_experiment(seq, &PerturbationSpec::new(0.01, 0.0, Regime::Weak, 0), &opts).unwrap();
    assert!(r.notes.iter().any(|n| n.contains("weak regime")));
    assert_eq!(r.to_json()["regime"], "weak");
}
