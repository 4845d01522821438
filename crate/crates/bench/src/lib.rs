//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use polydich::admissibility::BoundedSequence;
use polydich::{make_generator, Cocycle, GeneratorSpec, SpaceTag, Vector};
use serde_json::json;

/// Rotated upper-triangular system with a clear gap between stable and
/// unstable exponents; `d <= 4`.
pub fn triangular(d: usize, horizon: usize, seed: u64) -> Arc<Cocycle> {
    let exps = &[-1.0, 1.0, -0.6, 0.7][..d];
    let spec = GeneratorSpec::new("triangular-poly", json!({"exponents": exps, "seed": seed, "rotate": true}));
    Arc::new(Cocycle::new(Arc::new(make_generator(&spec, d, horizon).expect("generator"))))
}

/// Deterministic right-hand side in `Y_0`.
pub fn rhs(d: usize, horizon: usize) -> BoundedSequence {
    let entries = (1..=horizon)
        .map(|m| {
            if m == 1 {
                Vector::zeros(d)
            } else {
                Vector::from_fn(d, |i, _| ((m * (i + 1)) as f64).sin())
            }
        })
        .collect();
    BoundedSequence::new(entries, SpaceTag::Y0).expect("rhs in Y0")
}
