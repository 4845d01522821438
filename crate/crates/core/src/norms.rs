//! Time-indexed norm families `||.||_m`.
//!
//! Base and weighted norms are evaluated exactly. Adapted norms are built
//! from the dynamics: their defining suprema run over `m <= H` for a
//! configurable evaluation horizon `H`, so every adapted value is a lower
//! approximation of the infinite-horizon norm and is reported as truncated.

use std::sync::{Arc, OnceLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::splitting::{backward_chain, Splitting};
use crate::system::Cocycle;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseNorm {
    #[default]
    Euclidean,
    Sup,
    One,
}

impl BaseNorm {
    pub fn eval(self, x: &Vector) -> f64 {
        match self {
            BaseNorm::Euclidean => x.norm(),
            BaseNorm::Sup => x.amax(),
            BaseNorm::One => x.lp_norm(1),
        }
    }

    /// Induced operator norm.
    pub fn op_norm(self, a: &Matrix) -> f64 {
        match self {
            BaseNorm::Euclidean => linalg::spectral_norm(a),
            BaseNorm::Sup => a
                .row_iter()
                .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max),
            BaseNorm::One => a
                .column_iter()
                .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max),
        }
    }

    fn eval_slice(self, x: &[f64]) -> f64 {
        match self {
            BaseNorm::Euclidean => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            BaseNorm::Sup => x.iter().fold(0.0, |acc, v| acc.max(v.abs())),
            BaseNorm::One => x.iter().map(|v| v.abs()).sum(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormKind {
    Base,
    ExplicitWeights,
    AdaptedNonuniform,
    AdaptedStrong,
}

/// Serialized norm configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormSpec {
    pub kind: NormKind,
    #[serde(default)]
    pub base: BaseNorm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

impl NormSpec {
    pub fn base(base: BaseNorm) -> Self {
        NormSpec {
            kind: NormKind::Base,
            base,
            lambda: None,
            b: None,
            eval_horizon: None,
            weights: None,
        }
    }

    /// Builds the family; adapted kinds need the cocycle and a splitting.
    pub fn build(&self, dynamics: Option<(Arc<Cocycle>, Arc<Splitting>)>) -> Result<NormSequence> {
        match self.kind {
            NormKind::Base => Ok(NormSequence::base(self.base)),
            NormKind::ExplicitWeights => {
                let w = self
                    .weights
                    .clone()
                    .ok_or_else(|| Error::Config("explicit-weights norm needs `weights`".into()))?;
                NormSequence::weighted(self.base, w)
            }
            NormKind::AdaptedNonuniform | NormKind::AdaptedStrong => {
                let (cocycle, splitting) = dynamics
                    .ok_or_else(|| Error::Config("adapted norms need projections from a certificate".into()))?;
                let lambda = self
                    .lambda
                    .ok_or_else(|| Error::Config("adapted norms need `lambda`".into()))?;
                let h = self.eval_horizon.unwrap_or(cocycle.horizon());
                if self.kind == NormKind::AdaptedNonuniform {
                    NormSequence::adapted_nonuniform(cocycle, splitting, lambda, self.base, h)
                } else {
                    let b = self
                        .b
                        .ok_or_else(|| Error::Config("adapted-strong norms need `b`".into()))?;
                    NormSequence::adapted_strong(cocycle, splitting, lambda, b, self.base, h)
                }
            }
        }
    }
}

/// Per-time data of an adapted norm: stacked weighted orbit matrices.
struct Table {
    stable: Matrix,
    backward: Matrix,
    forward: Matrix,
}

struct Adapted {
    cocycle: Arc<Cocycle>,
    splitting: Arc<Splitting>,
    lambda: f64,
    b: Option<f64>,
    lambda_clamped: bool,
    horizon: usize,
    steps: Vec<Matrix>,
    tables: Vec<OnceLock<Table>>,
}

impl Adapted {
    fn table(&self, n: usize) -> &Table {
        self.tables[n - 1].get_or_init(|| self.build_table(n))
    }

    fn build_table(&self, n: usize) -> Table {
        let seq = self.cocycle.sequence();
        let split = &self.splitting;
        let d = seq.dimension();
        let h = self.horizon;
        let nf = n as f64;
        let p_n = split.p(n).expect("index checked").clone();
        let q_n = split.q(n).expect("index checked");

        let mut stable = Matrix::zeros((h - n + 1) * d, d);
        let mut f = p_n;
        for k in n..=h {
            if k > n {
                f = split.p(k).expect("index checked") * seq.a(k - 1) * f;
            }
            let w = (k as f64 / nf).powf(self.lambda);
            stable.view_mut(((k - n) * d, 0), (d, d)).copy_from(&(&f * w));
        }

        let chain = backward_chain(&self.steps, &q_n, n);
        let mut backward = Matrix::zeros(n * d, d);
        for (i, g) in chain.iter().enumerate() {
            let w = (nf / (i + 1) as f64).powf(self.lambda);
            backward.view_mut((i * d, 0), (d, d)).copy_from(&(g * w));
        }

        let forward = match self.b {
            Some(b) if h > n => {
                let mut out = Matrix::zeros((h - n) * d, d);
                let mut g = q_n;
                for k in n + 1..=h {
                    g = split.q(k).expect("index checked") * seq.a(k - 1) * g;
                    let w = (k as f64 / nf).powf(-b);
                    out.view_mut(((k - n - 1) * d, 0), (d, d)).copy_from(&(&g * w));
                }
                out
            }
            _ => Matrix::zeros(0, d),
        };
        Table {
            stable,
            backward,
            forward,
        }
    }
}

/// Components of an adapted norm value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormParts {
    /// `sup_{m >= n} ||A(m,n) P_n x|| (m/n)^lambda`.
    pub stable: f64,
    /// `sup_{m <= n} ||A(m,n) Q_n x|| (n/m)^lambda`.
    pub backward: f64,
    /// `sup_{m > n} ||A(m,n) Q_n x|| (m/n)^{-b}`, zero for the nonuniform family.
    pub forward: f64,
}

impl NormParts {
    pub fn total(&self) -> f64 {
        self.stable + self.backward + self.forward
    }
}

/// A family of norms `||.||_m` on `R^d`, cheap to clone.
#[derive(Clone)]
pub struct NormSequence {
    kind: NormKind,
    base: BaseNorm,
    weights: Option<Arc<Vec<f64>>>,
    adapted: Option<Arc<Adapted>>,
    equivalence: Option<(f64, f64)>,
}

impl std::fmt::Debug for NormSequence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NormSequence")
            .field("kind", &self.kind)
            .field("base", &self.base)
            .field("lambda", &self.lambda())
            .field("b", &self.b())
            .field("eval_horizon", &self.eval_horizon())
            .finish()
    }
}

impl NormSequence {
    pub fn base(base: BaseNorm) -> Self {
        NormSequence {
            kind: NormKind::Base,
            base,
            weights: None,
            adapted: None,
            equivalence: Some((1.0, 0.0)),
        }
    }

    pub fn euclidean() -> Self {
        Self::base(BaseNorm::Euclidean)
    }

    /// `||x||_m = w_m ||x||` with `weights[m - 1] = w_m > 0`.
    pub fn weighted(base: BaseNorm, weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Config("weights must be positive and finite".into()));
        }
        Ok(NormSequence {
            kind: NormKind::ExplicitWeights,
            base,
            weights: Some(Arc::new(weights)),
            adapted: None,
            equivalence: None,
        })
    }

    pub fn adapted_nonuniform(
        cocycle: Arc<Cocycle>,
        splitting: Arc<Splitting>,
        lambda: f64,
        base: BaseNorm,
        eval_horizon: usize,
    ) -> Result<Self> {
        Self::adapted(cocycle, splitting, lambda, None, base, eval_horizon)
    }

    /// Strong family; `lambda` is clamped to `min(lambda, b)` and the clamp recorded.
    pub fn adapted_strong(
        cocycle: Arc<Cocycle>,
        splitting: Arc<Splitting>,
        lambda: f64,
        b: f64,
        base: BaseNorm,
        eval_horizon: usize,
    ) -> Result<Self> {
        if !(b.is_finite() && b > 0.0) {
            return Err(Error::Config(format!("growth exponent b must be positive, got {b}")));
        }
        Self::adapted(cocycle, splitting, lambda, Some(b), base, eval_horizon)
    }

    fn adapted(
        cocycle: Arc<Cocycle>,
        splitting: Arc<Splitting>,
        lambda: f64,
        b: Option<f64>,
        base: BaseNorm,
        eval_horizon: usize,
    ) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::Config(format!("adapted norms need lambda > 0, got {lambda}")));
        }
        if splitting.dimension() != cocycle.dimension() {
            return Err(Error::DimensionMismatch {
                expected: cocycle.dimension(),
                got: splitting.dimension(),
                context: "splitting versus system dimension",
            });
        }
        let top = cocycle.horizon().min(splitting.horizon());
        if eval_horizon == 0 || eval_horizon > top {
            return Err(Error::range("eval_horizon", eval_horizon, 1, top));
        }
        let (lambda_eff, clamped) = match b {
            Some(b) if lambda > b => (b, true),
            _ => (lambda, false),
        };
        let steps = splitting.unstable_step_inverses(cocycle.sequence())?;
        let tables = (0..eval_horizon).map(|_| OnceLock::new()).collect();
        let kind = if b.is_some() {
            NormKind::AdaptedStrong
        } else {
            NormKind::AdaptedNonuniform
        };
        Ok(NormSequence {
            kind,
            base,
            weights: None,
            adapted: Some(Arc::new(Adapted {
                cocycle,
                splitting,
                lambda: lambda_eff,
                b,
                lambda_clamped: clamped,
                horizon: eval_horizon,
                steps,
                tables,
            })),
            equivalence: None,
        })
    }

    /// Attaches a known equivalence pair `(C, eps)`.
    pub fn with_equivalence(mut self, c: f64, eps: f64) -> Self {
        self.equivalence = Some((c, eps));
        self
    }

    pub fn equivalence(&self) -> Option<(f64, f64)> {
        self.equivalence
    }

    pub fn kind(&self) -> NormKind {
        self.kind
    }

    pub fn base_norm(&self) -> BaseNorm {
        self.base
    }

    /// The untransformed base family of this sequence.
    pub fn base_family(&self) -> NormSequence {
        NormSequence::base(self.base)
    }

    pub fn lambda(&self) -> Option<f64> {
        self.adapted.as_ref().map(|a| a.lambda)
    }

    pub fn b(&self) -> Option<f64> {
        self.adapted.as_ref().and_then(|a| a.b)
    }

    pub fn lambda_clamped(&self) -> bool {
        self.adapted.as_ref().is_some_and(|a| a.lambda_clamped)
    }

    pub fn eval_horizon(&self) -> Option<usize> {
        self.adapted.as_ref().map(|a| a.horizon)
    }

    /// True when norm values and operator norms are computed exactly.
    pub fn is_exact(&self) -> bool {
        self.adapted.is_none()
    }

    /// Adapted sups are cut at the evaluation horizon.
    pub fn truncated(&self) -> bool {
        self.adapted.is_some()
    }

    /// Largest time index the family can evaluate, if limited.
    pub fn max_index(&self) -> Option<usize> {
        match (&self.adapted, &self.weights) {
            (Some(a), _) => Some(a.horizon),
            (None, Some(w)) => Some(w.len()),
            _ => None,
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::range("n", n, 1, self.max_index().unwrap_or(usize::MAX)));
        }
        if let Some(top) = self.max_index() {
            if n > top {
                return Err(Error::range("n", n, 1, top));
            }
        }
        Ok(())
    }

    /// `||x||_n`.
    pub fn eval(&self, n: usize, x: &Vector) -> Result<f64> {
        self.check(n)?;
        Ok(match (&self.adapted, &self.weights) {
            (Some(_), _) => self.parts(n, x)?.total(),
            (None, Some(w)) => w[n - 1] * self.base.eval(x),
            (None, None) => self.base.eval(x),
        })
    }

    /// Stable and unstable components of an adapted norm value.
    pub fn parts(&self, n: usize, x: &Vector) -> Result<NormParts> {
        self.check(n)?;
        let a = self
            .adapted
            .as_ref()
            .ok_or_else(|| Error::Config("norm parts are only defined for adapted norms".into()))?;
        let t = a.table(n);
        let d = x.len();
        let sup = |stack: &Matrix| -> f64 {
            if stack.nrows() == 0 {
                return 0.0;
            }
            let y = stack * x;
            y.as_slice()
                .chunks(d)
                .map(|c| self.base.eval_slice(c))
                .fold(0.0, f64::max)
        };
        Ok(NormParts {
            stable: sup(&t.stable),
            backward: sup(&t.backward),
            forward: sup(&t.forward),
        })
    }

    /// Operator norm of `a` from `(R^d, ||.||_n)` to `(R^d, ||.||_m)`.
    ///
    /// Exact for base and weighted families; for adapted families this is a
    /// sampled lower estimate (coordinate directions, random directions and
    /// a local refinement of the best candidates).
    pub fn op_norm(&self, m: usize, n: usize, a: &Matrix) -> Result<f64> {
        self.check(m)?;
        self.check(n)?;
        match (&self.adapted, &self.weights) {
            (None, Some(w)) => Ok(w[m - 1] / w[n - 1] * self.base.op_norm(a)),
            (None, None) => Ok(self.base.op_norm(a)),
            (Some(_), _) => self.sampled_op_norm(m, n, a, 24),
        }
    }

    fn sampled_op_norm(&self, m: usize, n: usize, a: &Matrix, samples: usize) -> Result<f64> {
        let d = a.ncols();
        if a.iter().all(|v| *v == 0.0) {
            return Ok(0.0);
        }
        let ratio = |x: &Vector| -> Result<f64> {
            let den = self.eval(n, x)?;
            if den == 0.0 {
                return Ok(0.0);
            }
            Ok(self.eval(m, &(a * x))? / den)
        };
        let mut rng = ChaCha8Rng::seed_from_u64((m as u64) << 32 ^ n as u64);
        let mut cands: Vec<(f64, Vector)> = Vec::with_capacity(d + samples);
        for i in 0..d {
            let e = Vector::from_fn(d, |j, _| if i == j { 1.0 } else { 0.0 });
            cands.push((ratio(&e)?, e));
        }
        // right singular vectors of `a` are natural candidates too
        let svd = a.clone().svd(false, true);
        if let Some(vt) = svd.v_t {
            for r in vt.row_iter() {
                let v = r.transpose();
                cands.push((ratio(&v)?, v));
            }
        }
        for _ in 0..samples {
            let v = linalg::random_unit(&mut rng, d);
            cands.push((ratio(&v)?, v));
        }
        cands.sort_by(|x, y| y.0.total_cmp(&x.0));
        let mut best = cands[0].0;
        for (mut val, mut v) in cands.into_iter().take(3) {
            let mut step = 0.5;
            while step > 1e-4 {
                let mut improved = false;
                for _ in 0..4 * d {
                    let trial = &v + linalg::random_unit(&mut rng, d) * step;
                    let tn = trial.norm();
                    if tn == 0.0 {
                        continue;
                    }
                    let trial = trial / tn;
                    let r = ratio(&trial)?;
                    if r > val {
                        val = r;
                        v = trial;
                        improved = true;
                    }
                }
                if !improved {
                    step *= 0.5;
                }
            }
            best = best.max(val);
        }
        Ok(best)
    }
}

/// Outcome of [`check_norm_equivalence`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub c_hat: f64,
    pub epsilon_hat: f64,
    /// Lower inequality `||x|| <= ||x||_m` held on every sample.
    pub ok: bool,
    /// Smallest observed `||x||_m / ||x||`.
    pub min_ratio: f64,
}

/// Estimates `(C, eps)` with `||x|| <= ||x||_m <= C m^eps ||x||` on samples.
///
/// `eps` comes from a log-log regression of the per-index maximal ratio
/// against `m` (clamped at zero) unless `fixed_epsilon` is given; `C` is then
/// the smallest constant closing the upper inequality on the samples.
pub fn check_norm_equivalence(
    ns: &NormSequence,
    samples: &[Vector],
    indices: &[usize],
    fixed_epsilon: Option<f64>,
) -> Result<EquivalenceReport> {
    if samples.is_empty() || indices.is_empty() {
        return Err(Error::Config("norm equivalence needs samples and indices".into()));
    }
    let base = ns.base_norm();
    let mut per_index = Vec::with_capacity(indices.len());
    let mut min_ratio = f64::INFINITY;
    for &m in indices {
        let mut hi: f64 = 0.0;
        for x in samples {
            let bx = base.eval(x);
            if bx == 0.0 {
                continue;
            }
            let r = ns.eval(m, x)? / bx;
            hi = hi.max(r);
            min_ratio = min_ratio.min(r);
        }
        per_index.push((m, hi));
    }
    let epsilon_hat = match fixed_epsilon {
        Some(e) => e,
        None => {
            let xs: Vec<f64> = per_index.iter().map(|(m, _)| (*m as f64).ln()).collect();
            let ys: Vec<f64> = per_index.iter().map(|(_, r)| r.max(1e-300).ln()).collect();
            linalg::linear_fit(&xs, &ys).0.max(0.0)
        }
    };
    let c_hat = per_index
        .iter()
        .map(|(m, r)| r / (*m as f64).powf(epsilon_hat))
        .fold(0.0, f64::max);
    Ok(EquivalenceReport {
        c_hat,
        epsilon_hat,
        ok: min_ratio >= 1.0 - 1e-10,
        min_ratio,
    })
}
