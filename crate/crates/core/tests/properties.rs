use std::sync::Arc;

use approx::assert_relative_eq;
use polydich::admissibility::BoundedSequence;
use polydich::dichotomy::{gamma, SubspacePair};
use polydich::linalg::spectral_norm;
use polydich::oracle::{dense_cocycle, exhaustive_gamma};
use polydich::robustness::perturb;
use polydich::splitting::oblique_projection;
use polydich::{
    make_generator, BaseNorm, Cocycle, GeneratorSpec, Matrix, NormSequence, PerturbationSpec, Regime, SpaceTag,
    Splitting, TZOperator, Vector,
};
use proptest::prelude::*;
use serde_json::json;

fn triangular(seed: u64, d: usize, horizon: usize) -> Cocycle {
    let exps: Vec<f64> = (0..d).map(|i| -1.0 + i as f64).collect();
    let seq = make_generator(
        &GeneratorSpec::new("triangular-poly", json!({"exponents": exps, "seed": seed, "rotate": true})),
        d,
        horizon,
    )
    .unwrap();
    Cocycle::new(Arc::new(seq))
}

fn matrix(d: usize, k: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-1.0f64..1.0, d * k).prop_map(move |v| Matrix::from_column_slice(d, k, &v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cocycle_telescopes(seed in 0u64..1000, d in 1usize..=3, a in 1usize..=48, b in 1usize..=48, c in 1usize..=48) {
        let mut idx = [a, b, c];
        idx.sort();
        let [n, k, m] = idx;
        let co = triangular(seed, d, 48);
        let lhs = co.eval(m, k).unwrap() * co.eval(k, n).unwrap();
        let direct = co.eval(m, n).unwrap();
        let scale = direct.norm().max(1.0);
        prop_assert!((lhs - &direct).norm() <= 1e-12 * scale);
        let oracle = dense_cocycle(co.sequence(), m, n).unwrap();
        prop_assert!((oracle - direct).norm() <= 1e-12 * scale);
    }

    #[test]
    fn oblique_projection_is_idempotent(s in matrix(3, 2), u in matrix(3, 1)) {
        let full = polydich::linalg::hstack(&s, &u);
        prop_assume!(polydich::linalg::rcond(&full) > 1e-3);
        let p = oblique_projection(&s, &u, 1).unwrap();
        prop_assert!((&p * &p - &p).norm() <= 1e-9 * p.norm().max(1.0));
        prop_assert!((&p * &s - &s).norm() <= 1e-9 * p.norm().max(1.0));
        prop_assert!((&p * &u).norm() <= 1e-9 * p.norm().max(1.0));
    }

    #[test]
    fn random_perturbations_saturate_the_budget(
        c in 1e-4f64..1.0,
        eps in 0.0f64..0.5,
        seed in any::<u64>(),
        weak in any::<bool>(),
    ) {
        let seq = make_generator(&GeneratorSpec::new("diagonal-poly", json!({"lambda": 1.0})), 3, 24).unwrap();
        let regime = if weak { Regime::Weak } else { Regime::Strong };
        let spec = PerturbationSpec::new(c, eps, regime, seed);
        let b = perturb(&seq, &spec, None).unwrap();
        for m in 1..24 {
            let gap = spectral_norm(&(b.get(m).unwrap() - seq.get(m).unwrap()));
            prop_assert!((gap / spec.budget(m) - 1.0).abs() <= 1e-10);
            prop_assert!(spec.budget(m + 1) < spec.budget(m));
        }
    }

    #[test]
    fn tz_operator_is_linear(seed in 0u64..1000, alpha in -2.0f64..2.0, beta in -2.0f64..2.0, xs in prop::collection::vec(-1.0f64..1.0, 2 * 32), ys in prop::collection::vec(-1.0f64..1.0, 2 * 32)) {
        let co = Arc::new(triangular(seed, 2, 32));
        let z = Matrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let t = TZOperator::new(co, &z, NormSequence::euclidean()).unwrap();
        let seq = |v: &[f64]| {
            let mut e: Vec<Vector> = v.chunks(2).map(Vector::from_column_slice).collect();
            e[0][0] = 0.0;
            BoundedSequence::new(e, SpaceTag::YZ).unwrap()
        };
        let (x, y) = (seq(&xs), seq(&ys));
        let combined = t.apply(&x.lin_comb(alpha, &y, beta)).unwrap();
        let separate = t.apply(&x).unwrap().lin_comb(alpha, &t.apply(&y).unwrap(), beta);
        let diff = combined.sub(&separate).sup_norm(&NormSequence::euclidean()).unwrap();
        prop_assert!(diff <= 1e-10 * (1.0 + combined.sup_norm(&NormSequence::euclidean()).unwrap()));
    }

    #[test]
    fn adapted_norms_are_norms(x in prop::collection::vec(-1.0f64..1.0, 2), y in prop::collection::vec(-1.0f64..1.0, 2), s in -3.0f64..3.0, n in 1usize..=64) {
        let seq = make_generator(&GeneratorSpec::new("triangular-poly", json!({"exponents": [-1.0, 1.0], "seed": 3})), 2, 64).unwrap();
        let c = Arc::new(Cocycle::new(Arc::new(seq)));
        let split = Arc::new(Splitting::axis(2, 64, 1).unwrap());
        let ns = NormSequence::adapted_strong(c, split, 1.0, 1.0, BaseNorm::Euclidean, 64).unwrap();
        let (x, y) = (Vector::from_vec(x), Vector::from_vec(y));
        let nx = ns.eval(n, &x).unwrap();
        prop_assert!(ns.eval(n, &(&x + &y)).unwrap() <= nx + ns.eval(n, &y).unwrap() + 1e-12);
        assert_relative_eq!(ns.eval(n, &(&x * s)).unwrap(), s.abs() * nx, max_relative = 1e-12, epsilon = 1e-15);
        prop_assert!(nx + 1e-12 >= x.norm());
    }

    #[test]
    fn gamma_matches_oracle(t in 0.05f64..3.1, phi in 0.0f64..std::f64::consts::TAU) {
        let s = Matrix::from_column_slice(2, 1, &[phi.cos(), phi.sin()]);
        let u = Matrix::from_column_slice(2, 1, &[(phi + t).cos(), (phi + t).sin()]);
        let pair = SubspacePair { n: 1, stable_basis: s.clone(), unstable_basis: u.clone(), scores: vec![] };
        let (g, _) = gamma(&pair, &NormSequence::euclidean(), 64).unwrap();
        let theta = t.min(std::f64::consts::PI - t);
        prop_assert!((g - 2.0 * (theta / 2.0).sin()).abs() <= 1e-12);
        let oracle = exhaustive_gamma(&s, &u, &|v| v.norm(), 64).unwrap();
        prop_assert!((g - oracle).abs() <= 1e-9);
    }
}
