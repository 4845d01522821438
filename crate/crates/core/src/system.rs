//! Finite truncations of operator sequences `(A_m)` and their cocycles.
//!
//! Time indices are 1-based throughout: a sequence with horizon `N` stores
//! `A_1, ..., A_{N-1}` and the cocycle is defined for `1 <= n <= m <= N`.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::splitting::Splitting;

/// Where the matrices of a sequence came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Explicit,
    Generator(GeneratorSpec),
}

/// Generator descriptor, `{"kind": ..., "params": {...}}` in spec files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: String,
    #[serde(default)]
    pub params: Map<String, Value>,
}

impl GeneratorSpec {
    pub fn new(kind: impl Into<String>, params: Value) -> Self {
        let params = match params {
            Value::Object(map) => map,
            _ => Map::new(),
        };
        GeneratorSpec {
            kind: kind.into(),
            params,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OperatorSequence {
    dimension: usize,
    horizon: usize,
    matrices: Vec<Matrix>,
    provenance: Provenance,
}

impl OperatorSequence {
    /// Builds a sequence from `A_1, ..., A_{N-1}`; the horizon is `matrices.len() + 1`.
    pub fn from_matrices(dimension: usize, matrices: Vec<Matrix>) -> Result<Self> {
        Self::with_provenance(dimension, matrices, Provenance::Explicit)
    }

    fn with_provenance(dimension: usize, matrices: Vec<Matrix>, provenance: Provenance) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidSequence("dimension must be positive".into()));
        }
        for (i, a) in matrices.iter().enumerate() {
            if a.nrows() != dimension || a.ncols() != dimension {
                return Err(Error::InvalidSequence(format!(
                    "A_{} is {}x{}, expected {dimension}x{dimension}",
                    i + 1,
                    a.nrows(),
                    a.ncols()
                )));
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidSequence(format!("A_{} has non-finite entries", i + 1)));
            }
        }
        Ok(OperatorSequence {
            dimension,
            horizon: matrices.len() + 1,
            matrices,
            provenance,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// `A_m` for `1 <= m <= N-1`.
    pub fn get(&self, m: usize) -> Result<&Matrix> {
        if m == 0 || m >= self.horizon {
            return Err(Error::range("m", m, 1, self.horizon.saturating_sub(1)));
        }
        Ok(&self.matrices[m - 1])
    }

    /// Unchecked access for hot loops; callers guarantee `1 <= m < N`.
    pub(crate) fn a(&self, m: usize) -> &Matrix {
        &self.matrices[m - 1]
    }

    pub fn matrices(&self) -> &[Matrix] {
        &self.matrices
    }

    /// Same matrices cut at a smaller horizon.
    pub fn truncate(&self, horizon: usize) -> Result<Self> {
        if horizon == 0 || horizon > self.horizon {
            return Err(Error::range("horizon", horizon, 1, self.horizon));
        }
        Self::with_provenance(
            self.dimension,
            self.matrices[..horizon - 1].to_vec(),
            self.provenance.clone(),
        )
    }

    /// Largest one-step operator norm and where it is attained.
    pub fn max_step_norm(&self) -> (f64, usize) {
        self.matrices
            .iter()
            .enumerate()
            .map(|(i, a)| (linalg::spectral_norm(a), i + 1))
            .fold((0.0, 1), |acc, x| if x.0 > acc.0 { x } else { acc })
    }
}

// ---------------------------------------------------------------------------
// generators

fn param_f64(params: &Map<String, Value>, key: &str) -> Result<Option<f64>> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_f64()
            .filter(|x| x.is_finite())
            .map(Some)
            .ok_or_else(|| Error::InvalidParams(format!("`{key}` must be a finite number"))),
    }
}

fn param_usize(params: &Map<String, Value>, key: &str) -> Result<Option<usize>> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_u64()
            .map(|x| Some(x as usize))
            .ok_or_else(|| Error::InvalidParams(format!("`{key}` must be a non-negative integer"))),
    }
}

fn param_f64_list(params: &Map<String, Value>, key: &str) -> Result<Option<Vec<f64>>> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| {
                v.as_f64()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::InvalidParams(format!("`{key}` entries must be finite numbers")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some),
        Some(_) => Err(Error::InvalidParams(format!("`{key}` must be an array"))),
    }
}

/// One-step factor of a coordinate growing like `(m/n)^r`: `((m+1)/m)^r`.
fn rate_factor(m: usize, exponent: f64) -> f64 {
    ((m as f64 + 1.0) / m as f64).powf(exponent)
}

/// Diagonal exponents from either `exponents` or (`lambda`, optional `mu`, `stable_dim`).
fn diagonal_exponents(params: &Map<String, Value>, d: usize) -> Result<Vec<f64>> {
    if let Some(exps) = param_f64_list(params, "exponents")? {
        if exps.len() != d {
            return Err(Error::InvalidParams(format!(
                "`exponents` has {} entries for dimension {d}",
                exps.len()
            )));
        }
        return Ok(exps);
    }
    let lambda = param_f64(params, "lambda")?
        .ok_or_else(|| Error::InvalidParams("missing `lambda` (or `exponents`)".into()))?;
    if lambda <= 0.0 {
        return Err(Error::InvalidParams(format!("stable rate lambda must be positive, got {lambda}")));
    }
    let mu = param_f64(params, "mu")?.unwrap_or(lambda);
    if mu <= 0.0 {
        return Err(Error::InvalidParams(format!("unstable rate mu must be positive, got {mu}")));
    }
    let ds = param_usize(params, "stable_dim")?.unwrap_or(d.div_ceil(2));
    if ds > d {
        return Err(Error::InvalidParams(format!("stable_dim {ds} exceeds dimension {d}")));
    }
    Ok((0..d).map(|i| if i < ds { -lambda } else { mu }).collect())
}

fn diagonal_poly(d: usize, horizon: usize, exps: &[f64]) -> Vec<Matrix> {
    (1..horizon)
        .map(|m| Matrix::from_diagonal(&Vector::from_iterator(d, exps.iter().map(|&r| rate_factor(m, r)))))
        .collect()
}

/// Builds a deterministic operator sequence from a generator descriptor.
///
/// Supported kinds: `identity`, `diagonal-poly`, `nonuniform-diagonal`,
/// `triangular-poly`, `block-lyapunov`, `power2-counterexample` and
/// `explicit-file`.
pub fn make_generator(spec: &GeneratorSpec, d: usize, horizon: usize) -> Result<OperatorSequence> {
    if d == 0 {
        return Err(Error::InvalidParams("dimension must be positive".into()));
    }
    if horizon == 0 {
        return Err(Error::InvalidParams("horizon must be positive".into()));
    }
    let p = &spec.params;
    let matrices = match spec.kind.as_str() {
        "identity" => (1..horizon).map(|_| Matrix::identity(d, d)).collect(),
        "diagonal-poly" => diagonal_poly(d, horizon, &diagonal_exponents(p, d)?),
        "nonuniform-diagonal" => {
            let exps = diagonal_exponents(p, d)?;
            let eps = param_f64(p, "epsilon")?.unwrap_or(0.0);
            if eps < 0.0 {
                return Err(Error::InvalidParams(format!("epsilon must be >= 0, got {eps}")));
            }
            // stable entries of A(m, n) become (n/m)^lambda * w(m)/w(n) with
            // w(k) = k^(-eps) on k = 2^l and 1 elsewhere.
            let log_w = |k: usize| {
                if linalg::is_power_of_two_ge2(k) {
                    -eps * (k as f64).ln()
                } else {
                    0.0
                }
            };
            (1..horizon)
                .map(|m| {
                    let mod_factor = (log_w(m + 1) - log_w(m)).exp();
                    Matrix::from_diagonal(&Vector::from_iterator(
                        d,
                        exps.iter().map(|&r| {
                            if r < 0.0 {
                                rate_factor(m, r) * mod_factor
                            } else {
                                rate_factor(m, r)
                            }
                        }),
                    ))
                })
                .collect()
        }
        "triangular-poly" => triangular_poly(p, d, horizon)?,
        "block-lyapunov" => block_lyapunov(p, d, horizon)?,
        "power2-counterexample" => {
            if d != 1 {
                return Err(Error::InvalidParams("power2-counterexample is one-dimensional".into()));
            }
            (1..horizon)
                .map(|n| {
                    let v = if linalg::is_power_of_two_ge2(n) { n as f64 } else { 0.0 };
                    Matrix::from_element(1, 1, v)
                })
                .collect()
        }
        "explicit-file" => {
            let path = p
                .get("path")
                .and_then(Value::as_str)
                .ok_or_else(|| Error::InvalidParams("explicit-file needs a string `path`".into()))?;
            let loaded = crate::io::read_system(std::path::Path::new(path))?;
            if loaded.dimension() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: loaded.dimension(),
                    context: "explicit-file dimension",
                });
            }
            if loaded.horizon() < horizon {
                return Err(Error::InvalidParams(format!(
                    "explicit-file provides horizon {}, {horizon} requested",
                    loaded.horizon()
                )));
            }
            loaded.matrices()[..horizon - 1].to_vec()
        }
        other => return Err(Error::UnknownGenerator(other.to_string())),
    };
    OperatorSequence::with_provenance(d, matrices, Provenance::Generator(spec.clone()))
}

/// Upper-triangular polynomial model: diagonal rates from `exponents`, strictly
/// upper coupling `C_ij / (m+1)` with Gaussian `C` scaled by `coupling`, and an
/// optional fixed random rotation `R A_m R^T`.
fn triangular_poly(p: &Map<String, Value>, d: usize, horizon: usize) -> Result<Vec<Matrix>> {
    let exps = diagonal_exponents(p, d)?;
    let coupling = param_f64(p, "coupling")?.unwrap_or(0.5);
    let seed = param_usize(p, "seed")?.unwrap_or(0) as u64;
    let rotate = p.get("rotate").and_then(Value::as_bool).unwrap_or(false);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut upper = linalg::random_gaussian(&mut rng, d, d) * coupling;
    for i in 0..d {
        for j in 0..=i {
            upper[(i, j)] = 0.0;
        }
    }
    let rotation = if rotate {
        let g = linalg::random_gaussian(&mut rng, d, d);
        g.qr().q()
    } else {
        Matrix::identity(d, d)
    };
    Ok((1..horizon)
        .map(|m| {
            let mut t = &upper / (m as f64 + 1.0);
            for i in 0..d {
                t[(i, i)] = rate_factor(m, exps[i]);
            }
            &rotation * t * rotation.transpose()
        })
        .collect())
}

fn block_lyapunov(p: &Map<String, Value>, d: usize, horizon: usize) -> Result<Vec<Matrix>> {
    let sub = |key: &str| -> Result<(GeneratorSpec, usize)> {
        let obj = p
            .get(key)
            .and_then(Value::as_object)
            .ok_or_else(|| Error::InvalidParams(format!("block-lyapunov needs an object `{key}`")))?;
        let kind = obj
            .get("kind")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::InvalidParams(format!("`{key}.kind` missing")))?;
        let dim = param_usize(obj, "dimension")?
            .ok_or_else(|| Error::InvalidParams(format!("`{key}.dimension` missing")))?;
        let params = obj.get("params").cloned().unwrap_or(Value::Object(Map::new()));
        Ok((GeneratorSpec::new(kind, params), dim))
    };
    let (stable_spec, ks) = sub("stable")?;
    let (unstable_spec, ku) = sub("unstable")?;
    if ks + ku != d {
        return Err(Error::InvalidParams(format!(
            "block dimensions {ks} + {ku} do not add up to {d}"
        )));
    }
    let blocks = [
        (ks > 0).then(|| make_generator(&stable_spec, ks, horizon)).transpose()?,
        (ku > 0).then(|| make_generator(&unstable_spec, ku, horizon)).transpose()?,
    ];
    Ok((1..horizon)
        .map(|m| {
            let mut a = Matrix::zeros(d, d);
            let mut offset = 0;
            for b in blocks.iter().flatten() {
                let k = b.dimension();
                a.view_mut((offset, offset), (k, k)).copy_from(b.a(m));
                offset += k;
            }
            a
        })
        .collect())
}

// ---------------------------------------------------------------------------
// cocycle

/// Memoised evaluator of `A(m, n) = A_{m-1} ... A_n`.
///
/// Forward orbits `k -> A(k, n)` are cached for `n` on the dyadic grid
/// `{1, 2, 4, ...}`; everything else is recomputed. Products are accumulated
/// left-associated, `A(k+1, n) = A_k * A(k, n)`, so cached and fresh values
/// agree bitwise.
pub struct Cocycle {
    seq: Arc<OperatorSequence>,
    orbits: RwLock<HashMap<usize, Arc<Vec<Matrix>>>>,
}

impl std::fmt::Debug for Cocycle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Cocycle")
            .field("dimension", &self.seq.dimension())
            .field("horizon", &self.seq.horizon())
            .finish()
    }
}

impl Cocycle {
    pub fn new(seq: Arc<OperatorSequence>) -> Self {
        Cocycle {
            seq,
            orbits: RwLock::new(HashMap::new()),
        }
    }

    pub fn sequence(&self) -> &OperatorSequence {
        &self.seq
    }

    pub fn sequence_arc(&self) -> Arc<OperatorSequence> {
        Arc::clone(&self.seq)
    }

    pub fn dimension(&self) -> usize {
        self.seq.dimension()
    }

    pub fn horizon(&self) -> usize {
        self.seq.horizon()
    }

    fn check_index(&self, what: &'static str, k: usize) -> Result<()> {
        if k == 0 || k > self.horizon() {
            return Err(Error::range(what, k, 1, self.horizon()));
        }
        Ok(())
    }

    /// `A(m, n)` for `1 <= n <= m <= N`.
    pub fn eval(&self, m: usize, n: usize) -> Result<Matrix> {
        self.check_index("m", m)?;
        self.check_index("n", n)?;
        if m < n {
            return Err(Error::BackwardEvaluation { m, n });
        }
        if n.is_power_of_two() {
            return Ok(self.orbit(n)?[m - n].clone());
        }
        let mut acc = Matrix::identity(self.dimension(), self.dimension());
        for k in n..m {
            acc = self.seq.a(k) * acc;
        }
        Ok(acc)
    }

    /// `[A(n, n), A(n+1, n), ..., A(N, n)]`; entry `k - n` holds `A(k, n)`.
    pub fn orbit(&self, n: usize) -> Result<Arc<Vec<Matrix>>> {
        self.check_index("n", n)?;
        let cacheable = n.is_power_of_two();
        if cacheable {
            if let Some(hit) = self.orbits.read().expect("cocycle cache poisoned").get(&n) {
                return Ok(Arc::clone(hit));
            }
        }
        let d = self.dimension();
        let mut out = Vec::with_capacity(self.horizon() - n + 1);
        let mut acc = Matrix::identity(d, d);
        out.push(acc.clone());
        for k in n..self.horizon() {
            acc = self.seq.a(k) * acc;
            out.push(acc.clone());
        }
        let out = Arc::new(out);
        if cacheable {
            let mut cache = self.orbits.write().expect("cocycle cache poisoned");
            return Ok(Arc::clone(cache.entry(n).or_insert(out)));
        }
        Ok(out)
    }

    /// Vector orbit `[x, A_n x, ..., A(N, n) x]` without forming matrices.
    pub fn orbit_of(&self, n: usize, x: &Vector) -> Result<Vec<Vector>> {
        self.check_index("n", n)?;
        let mut out = Vec::with_capacity(self.horizon() - n + 1);
        let mut v = x.clone();
        out.push(v.clone());
        for k in n..self.horizon() {
            v = self.seq.a(k) * v;
            out.push(v.clone());
        }
        Ok(out)
    }

    /// Backward cocycle on the unstable bundle: the inverse of
    /// `A(n, m)` restricted to `Z(m)`, for `m <= n`.
    pub fn on_unstable(&self, m: usize, n: usize, splitting: &Splitting) -> Result<UnstableMap> {
        self.check_index("m", m)?;
        self.check_index("n", n)?;
        if m > n {
            return Err(Error::Config(format!(
                "cocycle_on_unstable needs m <= n, got m = {m}, n = {n}"
            )));
        }
        let um = splitting.unstable_basis(m)?.clone();
        let un = splitting.unstable_basis(n)?.clone();
        if um.ncols() != un.ncols() {
            return Err(Error::DimensionMismatch {
                expected: um.ncols(),
                got: un.ncols(),
                context: "unstable dimensions along the orbit",
            });
        }
        let du = um.ncols();
        if du == 0 {
            return Ok(UnstableMap {
                coords: Matrix::zeros(0, 0),
                from: un,
                to: um,
            });
        }
        let forward = self.eval(n, m)?;
        let restricted = un.transpose() * forward * &um;
        let rc = linalg::rcond(&restricted);
        if rc < 1e-12 {
            return Err(Error::UnstableRestrictionSingular { m, n, rcond: rc });
        }
        let coords = restricted
            .try_inverse()
            .ok_or(Error::UnstableRestrictionSingular { m, n, rcond: rc })?;
        Ok(UnstableMap { coords, from: un, to: um })
    }
}

/// Linear map `Z(n) -> Z(m)` expressed in orthonormal bases of both spaces.
#[derive(Clone, Debug)]
pub struct UnstableMap {
    /// `d_u x d_u` matrix from `Z(n)` coordinates to `Z(m)` coordinates.
    pub coords: Matrix,
    pub from: Matrix,
    pub to: Matrix,
}

impl UnstableMap {
    /// The map as a `d x d` matrix acting on vectors of `Z(n)` (and killing `Z(n)^perp`).
    pub fn ambient(&self) -> Matrix {
        if self.coords.nrows() == 0 {
            return Matrix::zeros(self.from.nrows(), self.from.nrows());
        }
        &self.to * &self.coords * self.from.transpose()
    }

    pub fn apply(&self, x: &Vector) -> Vector {
        if self.coords.nrows() == 0 {
            return Vector::zeros(self.from.nrows());
        }
        &self.to * (&self.coords * (self.from.transpose() * x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use serde_json::json;

    pub(crate) fn diag_model(n: usize) -> OperatorSequence {
        make_generator(&GeneratorSpec::new("diagonal-poly", json!({"lambda": 1.0})), 2, n).unwrap()
    }

    #[test]
    fn identity_cocycle_is_identity() {
        let seq = make_generator(&GeneratorSpec::new("identity", json!({})), 3, 8).unwrap();
        let c = Cocycle::new(Arc::new(seq));
        assert_eq!(c.eval(5, 2).unwrap(), Matrix::identity(3, 3));
    }

    #[test]
    fn diagonal_cocycle_telescopes() {
        let c = Cocycle::new(Arc::new(diag_model(64)));
        for (m, n) in [(5, 2), (64, 1), (33, 7), (9, 9)] {
            let a = c.eval(m, n).unwrap();
            assert_relative_eq!(a[(0, 0)], n as f64 / m as f64, max_relative = 1e-13);
            assert_relative_eq!(a[(1, 1)], m as f64 / n as f64, max_relative = 1e-13);
            assert_eq!(a[(0, 1)], 0.0);
        }
    }

    #[test]
    fn diagonal_poly_entries() {
        let seq = diag_model(64);
        let a3 = seq.get(3).unwrap();
        assert_relative_eq!(a3[(0, 0)], 0.75, max_relative = 1e-15);
        assert_relative_eq!(a3[(1, 1)], 4.0 / 3.0, max_relative = 1e-15);
    }

    #[test]
    fn counterexample_values_and_nilpotency() {
        let seq = make_generator(&GeneratorSpec::new("power2-counterexample", json!({})), 1, 16).unwrap();
        let vals: Vec<f64> = (1..16).map(|n| seq.get(n).unwrap()[(0, 0)]).collect();
        assert_eq!(vals[0], 0.0, "A_1 is zero: 1 = 2^0 is excluded");
        assert_eq!(vals[1], 2.0);
        assert_eq!(vals[3], 4.0);
        assert_eq!(vals[7], 8.0);
        assert_eq!(vals.iter().filter(|v| **v != 0.0).count(), 3);
        let c = Cocycle::new(Arc::new(seq));
        assert_eq!(c.eval(5, 3).unwrap()[(0, 0)], 0.0);
        for n in 1..=16 {
            for m in n..=16 {
                let v = c.eval(m, n).unwrap()[(0, 0)];
                if m - n >= 2 {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn block_lyapunov_matches_diagonal() {
        let spec = GeneratorSpec::new(
            "block-lyapunov",
            json!({
                "stable": {"kind": "diagonal-poly", "dimension": 1, "params": {"exponents": [-1.0]}},
                "unstable": {"kind": "diagonal-poly", "dimension": 1, "params": {"exponents": [1.0]}}
            }),
        );
        let block = make_generator(&spec, 2, 32).unwrap();
        let direct = diag_model(32);
        assert_eq!(block.matrices(), direct.matrices());
    }

    #[test]
    fn generator_errors() {
        assert!(matches!(
            make_generator(&GeneratorSpec::new("nope", json!({})), 2, 8),
            Err(Error::UnknownGenerator(_))
        ));
        assert!(matches!(
            make_generator(&GeneratorSpec::new("diagonal-poly", json!({"lambda": -1.0})), 2, 8),
            Err(Error::InvalidParams(_))
        ));
        assert!(matches!(
            make_generator(&GeneratorSpec::new("diagonal-poly", json!({"lambda": 0.0})), 2, 8),
            Err(Error::InvalidParams(_))
        ));
    }

    #[test]
    fn range_and_backward_errors() {
        let c = Cocycle::new(Arc::new(diag_model(8)));
        assert!(matches!(c.eval(9, 1), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(c.eval(0, 0), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(c.eval(2, 5), Err(Error::BackwardEvaluation { .. })));
    }

    #[test]
    fn unstable_inverse_on_diagonal_model() {
        let seq = Arc::new(diag_model(32));
        let c = Cocycle::new(Arc::clone(&seq));
        let split = Splitting::axis(2, 32, 1).unwrap();
        for (m, n) in [(3, 10), (1, 32), (7, 7)] {
            let map = c.on_unstable(m, n, &split).unwrap();
            assert_relative_eq!(map.coords[(0, 0)].abs(), m as f64 / n as f64, max_relative = 1e-13);
            // forward then backward is the identity on Z(m)
            let z = Vector::from_column_slice(&[0.0, 1.0]);
            let back = map.apply(&(c.eval(n, m).unwrap() * &z));
            assert_relative_eq!((back - z).norm(), 0.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn singular_unstable_restriction_is_reported() {
        let mut mats = diag_model(6).matrices().to_vec();
        mats[2][(1, 1)] = 0.0; // A_3 kills Z(3)
        let seq = Arc::new(OperatorSequence::from_matrices(2, mats).unwrap());
        let c = Cocycle::new(seq);
        let split = Splitting::axis(2, 6, 1).unwrap();
        assert!(matches!(
            c.on_unstable(2, 5, &split),
            Err(Error::UnstableRestrictionSingular { .. })
        ));
    }

    #[test]
    fn cached_and_fresh_agree_bitwise() {
        let spec = GeneratorSpec::new(
            "triangular-poly",
            json!({"exponents": [-0.7, 0.4, 1.2], "coupling": 1.0, "seed": 3, "rotate": true}),
        );
        let seq = Arc::new(make_generator(&spec, 3, 40).unwrap());
        let c = Cocycle::new(Arc::clone(&seq));
        let cached = c.eval(37, 8).unwrap();
        let mut fresh = Matrix::identity(3, 3);
        for k in 8..37 {
            fresh = seq.get(k).unwrap() * fresh;
        }
        assert_eq!(cached, fresh);
        assert_eq!(c.eval(37, 8).unwrap(), cached);
    }
}
