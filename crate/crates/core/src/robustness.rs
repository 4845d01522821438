//! Persistence of strong nonuniform dichotomies under small perturbations.
//!
//! A perturbation `B_m = A_m + E_m` is admissible when
//! `||E_m|| <= c / (m+1)^{2+eps}` (strong regime) or `c / (m+1)^{1+eps}`
//! (weak regime). The operator gap `||T_Z - T~_Z||` is then at most `cC`,
//! and the perturbed cocycle inherits a growth bound through a discrete
//! Gronwall argument.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::admissibility::{invertibility_report, BoundedSequence, SpaceTag, TZOperator};
use crate::dichotomy::{certify, fit_growth_bound, DichotomyCertificate, DichotomyOptions, GrowthReport};
use crate::error::{Error, Result};
use crate::io::num;
use crate::linalg::{self, Matrix, Vector};
use crate::norms::{check_norm_equivalence, BaseNorm, NormSequence};
use crate::splitting::Splitting;
use crate::system::{Cocycle, OperatorSequence};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// Budget `c / (m+1)^{2+eps}`; the perturbed system stays strong.
    #[default]
    Strong,
    /// Budget `c / (m+1)^{1+eps}`; only the nonuniform dichotomy persists.
    Weak,
}

impl Regime {
    pub fn exponent(self, epsilon: f64) -> f64 {
        match self {
            Regime::Strong => 2.0 + epsilon,
            Regime::Weak => 1.0 + epsilon,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Strong => "strong",
            Regime::Weak => "weak",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub enum PerturbationMode {
    /// `E_m = budget(m) G / ||G||` with `G` Gaussian; saturates the budget.
    #[default]
    RandomDirection,
    /// Rank-one map from the stable direction at `m` to the unstable
    /// direction at `m+1`, the coupling that most disturbs equivariance.
    AdversarialAligned,
    /// User supplied `E_1, ..., E_{N-1}`, checked against the budget.
    Explicit(Vec<Matrix>),
}

impl PerturbationMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PerturbationMode::RandomDirection => "random-direction",
            PerturbationMode::AdversarialAligned => "adversarial-aligned",
            PerturbationMode::Explicit(_) => "explicit",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationSpec {
    pub c: f64,
    pub epsilon: f64,
    pub mode: PerturbationMode,
    pub regime: Regime,
    pub seed: u64,
    /// Norm in which `||E_m||` is measured.
    pub base: BaseNorm,
}

impl PerturbationSpec {
    pub fn new(c: f64, epsilon: f64, regime: Regime, seed: u64) -> Self {
        PerturbationSpec {
            c,
            epsilon,
            mode: PerturbationMode::RandomDirection,
            regime,
            seed,
            base: BaseNorm::Euclidean,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c >= 0.0) {
            return Err(Error::Config(format!("budget constant c must be >= 0, got {}", self.c)));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::Config(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        Ok(())
    }

    /// `c / (m+1)^p` with `p` set by the regime.
    pub fn budget(&self, m: usize) -> f64 {
        self.c / (m as f64 + 1.0).powf(self.regime.exponent(self.epsilon))
    }
}

fn step_rng(seed: u64, m: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(m as u64);
    rng
}

/// `B_m = A_m + E_m`. Deterministic in the seed; `c = 0` returns `A`.
///
/// Adversarial mode needs the splitting of `A`; without one it aligns `E_m`
/// with the top singular pair of `A_m`.
pub fn perturb(seq: &OperatorSequence, spec: &PerturbationSpec, split: Option<&Splitting>) -> Result<OperatorSequence> {
    spec.validate()?;
    let d = seq.dimension();
    let base = spec.base;
    let unit = |g: Matrix| {
        let n = base.op_norm(&g);
        if n == 0.0 {
            g
        } else {
            g / n
        }
    };
    let perturbed = seq
        .matrices()
        .iter()
        .enumerate()
        .map(|(i, a)| -> Result<Matrix> {
            let m = i + 1;
            let budget = spec.budget(m);
            let e = match &spec.mode {
                PerturbationMode::RandomDirection => {
                    let mut rng = step_rng(spec.seed, m);
                    unit(linalg::random_gaussian(&mut rng, d, d)) * budget
                }
                PerturbationMode::AdversarialAligned => {
                    let pair = split.and_then(|s| {
                        let from = s.stable_basis(m).ok()?;
                        let to = s.unstable_basis(m + 1).ok()?;
                        (from.ncols() > 0 && to.ncols() > 0)
                            .then(|| (to.column(0).into_owned(), from.column(0).into_owned()))
                    });
                    let (u, v) = pair.unwrap_or_else(|| {
                        let svd = a.clone().svd(true, true);
                        let u = svd.u.expect("requested").column(0).into_owned();
                        let v = svd.v_t.expect("requested").row(0).transpose();
                        (u, v)
                    });
                    unit(&u * v.transpose()) * budget
                }
                PerturbationMode::Explicit(es) => {
                    let e = es.get(i).ok_or_else(|| {
                        Error::Config(format!("explicit perturbation has {} matrices, need {}", es.len(), seq.matrices().len()))
                    })?;
                    if e.nrows() != d || e.ncols() != d {
                        return Err(Error::DimensionMismatch {
                            expected: d,
                            got: e.nrows(),
                            context: "explicit perturbation size",
                        });
                    }
                    let norm = base.op_norm(e);
                    if norm > budget * (1.0 + 1e-12) {
                        return Err(Error::BudgetExceeded { index: m, norm, budget });
                    }
                    e.clone()
                }
            };
            Ok(a + e)
        })
        .collect::<Result<Vec<_>>>()?;
    OperatorSequence::from_matrices(d, perturbed)
}

/// `max_m ||A_m - B_m|| / budget(m)`; at most one for admissible perturbations.
pub fn budget_ratio(a: &OperatorSequence, b: &OperatorSequence, spec: &PerturbationSpec) -> f64 {
    a.matrices()
        .iter()
        .zip(b.matrices())
        .enumerate()
        .map(|(i, (x, y))| {
            let budget = spec.budget(i + 1);
            let gap = spec.base.op_norm(&(x - y));
            if budget == 0.0 {
                if gap == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                gap / budget
            }
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GapReport {
    /// `cC` times the regime/norm correction `sup_m (m+1)^{1 + eps_norm - p}`.
    pub gap_bound: f64,
    /// Largest `||(T_Z - T~_Z) x||_inf / ||x||_{T_Z}` over the probes.
    pub empirical_gap: f64,
    /// Pointwise form `||(A_m - B_m) x||_{m+1} <= cC/(m+1) ||x||_m` held on every probe.
    pub pointwise_ok: bool,
    /// Largest ratio of the pointwise left side to its bound.
    pub pointwise_worst: f64,
}

/// Bounds and probes `||T_Z - T~_Z||` in `norms`, which must carry `(C, eps)`.
pub fn operator_gap(
    a: &Arc<Cocycle>,
    b: &Arc<Cocycle>,
    norms: &NormSequence,
    z: &Matrix,
    spec: &PerturbationSpec,
) -> Result<GapReport> {
    let (cn, eps_norm) = norms
        .equivalence()
        .ok_or_else(|| Error::Config("operator gap needs norms with known equivalence constants (C, eps)".into()))?;
    let (sa, sb) = (a.sequence(), b.sequence());
    if sa.dimension() != sb.dimension() || sa.horizon() != sb.horizon() {
        return Err(Error::DimensionMismatch {
            expected: sa.horizon(),
            got: sb.horizon(),
            context: "perturbed horizon",
        });
    }
    let horizon = sa.horizon();
    let d = sa.dimension();
    let p = spec.regime.exponent(spec.epsilon);
    // sup over m of (m+1) * C (m+1)^eps_norm * c/(m+1)^p, in units of cC
    let q = 1.0 + eps_norm - p;
    let correction = if q <= 0.0 { 1.0 } else { (horizon as f64).powf(q) };
    let gap_bound = spec.c * cn * correction;
    if spec.c == 0.0 || horizon < 3 {
        return Ok(GapReport {
            gap_bound,
            empirical_gap: 0.0,
            pointwise_ok: true,
            pointwise_worst: 0.0,
        });
    }
    let t = TZOperator::new(Arc::clone(a), z, norms.clone())?;
    let ms = linalg::geometric_grid(2, horizon - 1, 24);
    let results = ms
        .par_iter()
        .map(|&m| -> Result<(f64, f64)> {
            let e = sb.get(m)? - sa.get(m)?;
            let mut rng = step_rng(spec.seed ^ 0x9e37_79b9, m);
            let mut dirs: Vec<Vector> = vec![e.clone().svd(false, true).v_t.expect("requested").row(0).transpose()];
            dirs.extend((0..4).map(|_| linalg::random_unit(&mut rng, d)));
            let mut gap: f64 = 0.0;
            let mut point: f64 = 0.0;
            for v in dirs {
                let nv = norms.eval(m, &v)?;
                if nv == 0.0 {
                    continue;
                }
                let ev = norms.eval(m + 1, &(&e * &v))?;
                point = point.max(ev / (spec.c * cn / (m as f64 + 1.0) * nv));
                let mut entries = vec![Vector::zeros(d); horizon];
                entries[m - 1] = v;
                let x = BoundedSequence::new(entries, SpaceTag::YZ)?;
                gap = gap.max((m as f64 + 1.0) * ev / t.graph_norm(&x)?);
            }
            Ok((gap, point))
        })
        .collect::<Result<Vec<_>>>()?;
    let empirical_gap = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let pointwise_worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(GapReport {
        gap_bound,
        empirical_gap,
        pointwise_ok: pointwise_worst <= 1.0 + 1e-9,
        pointwise_worst,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Smallness {
    pub ok: bool,
    pub product: f64,
    /// `1 - gap_bound * inv_norm_upper`.
    pub margin: f64,
}

/// Neumann criterion `gap_bound * ||T_Z^{-1}|| < 1`.
pub fn smallness_condition(gap_bound: f64, inv_norm_upper: f64) -> Smallness {
    let product = if gap_bound == 0.0 { 0.0 } else { gap_bound * inv_norm_upper };
    Smallness {
        ok: product < 1.0,
        product,
        margin: 1.0 - product,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GronwallConstants {
    #[serde(rename = "M")]
    pub m: f64,
    pub a: f64,
    #[serde(rename = "C")]
    pub c_norm: f64,
    pub c: f64,
}

impl GronwallConstants {
    /// `M C c`.
    pub fn shift(&self) -> f64 {
        self.m * self.c_norm * self.c
    }

    /// `M e^{MCc} (m/n)^{a + MCc}`.
    pub fn bound(&self, m: usize, n: usize) -> f64 {
        let s = self.shift();
        self.m * s.exp() * (m as f64 / n as f64).powf(self.a + s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GronwallReport {
    pub ok: bool,
    pub pairs: usize,
    /// Largest `||B(m,n)|| / bound(m,n)`.
    pub worst_ratio: f64,
    /// `(m, n)` attaining `worst_ratio`.
    pub worst_pair: (usize, usize),
    /// `prod (1 + MCc/(j+1)) <= exp(MCc (1 + log(m/n)))` on every pair.
    pub product_ok: bool,
    pub product_worst: f64,
}

/// Checks the perturbed growth bound `||B(m,n)||_{m<-n} <= M e^{MCc} (m/n)^{a+MCc}`
/// on a geometric grid of pairs.
pub fn gronwall_growth_check(b: &Cocycle, norms: &NormSequence, consts: &GronwallConstants) -> Result<GronwallReport> {
    let top = norms.max_index().map_or(b.horizon(), |h| h.min(b.horizon()));
    let ns = linalg::geometric_grid(1, top, 12);
    let pairs: Vec<(usize, usize)> = ns
        .iter()
        .flat_map(|&n| linalg::geometric_grid(n, top, 12).into_iter().map(move |m| (m, n)))
        .collect();
    let shift = consts.shift();
    let results = pairs
        .par_iter()
        .map(|&(m, n)| -> Result<(f64, f64)> {
            let v = norms.op_norm(m, n, &b.eval(m, n)?)?;
            let prod: f64 = (n..m).map(|j| (shift / (j as f64 + 1.0)).ln_1p()).sum();
            let rhs = shift * (1.0 + (m as f64 / n as f64).ln());
            Ok((v / consts.bound(m, n), prod - rhs))
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut worst_ratio, mut worst_pair) = (0.0, (1, 1));
    for (r, pair) in results.iter().zip(&pairs) {
        if r.0 > worst_ratio {
            worst_ratio = r.0;
            worst_pair = *pair;
        }
    }
    let product_worst = results.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(GronwallReport {
        ok: worst_ratio <= 1.0 + 1e-9,
        pairs: pairs.len(),
        worst_ratio,
        worst_pair,
        product_ok: product_worst <= 1e-12,
        product_worst,
    })
}

#[derive(Clone, Debug)]
pub struct RobustnessOptions {
    pub seeds: Vec<u64>,
    pub dichotomy: DichotomyOptions,
    pub base: BaseNorm,
    /// Samples per index for the norm-equivalence estimate.
    pub equivalence_samples: usize,
}

impl Default for RobustnessOptions {
    fn default() -> Self {
        RobustnessOptions {
            seeds: (0..32).collect(),
            dichotomy: DichotomyOptions::default(),
            base: BaseNorm::Euclidean,
            equivalence_samples: 64,
        }
    }
}

/// Outcome for one perturbation seed.
#[derive(Clone, Debug)]
pub struct SeedOutcome {
    pub seed: u64,
    pub budget_ratio: f64,
    pub gap: GapReport,
    pub certificate: std::result::Result<DichotomyCertificate, String>,
    pub growth: Option<GrowthReport>,
    pub gronwall: Option<GronwallReport>,
    /// `max(|dD|, |dlambda|, |deps|)` against the unperturbed certificate.
    pub deviation: f64,
}

impl SeedOutcome {
    pub fn strong(&self) -> bool {
        self.certificate.as_ref().is_ok_and(|c| c.flags.strong)
    }

    /// Perturbed growth exponent in the adapted norms.
    pub fn a_hat(&self) -> Option<f64> {
        self.growth.map(|g| g.a)
    }

    fn to_json(&self) -> Value {
        let cert = match &self.certificate {
            Ok(c) => json!({
                "flags": serde_json::to_value(c.flags).expect("flags serialize"),
                "D": num(c.constants.d),
                "lambda": num(c.constants.lambda),
                "epsilon": num(c.constants.epsilon),
            }),
            Err(e) => json!({"error": e}),
        };
        json!({
            "seed": self.seed,
            "budget_ratio": num(self.budget_ratio),
            "empirical_gap": num(self.gap.empirical_gap),
            "pointwise_ok": self.gap.pointwise_ok,
            "certificate": cert,
            "a_hat": self.a_hat().map(num),
            "gronwall_ok": self.gronwall.as_ref().map(|g| g.ok && g.product_ok),
            "deviation": num(self.deviation),
        })
    }
}

#[derive(Clone, Debug)]
pub struct RobustnessReport {
    pub c: f64,
    pub regime: Regime,
    pub mode: &'static str,
    pub epsilon: f64,
    /// `(C, eps)` of the adapted norms.
    pub equivalence: (f64, f64),
    pub growth_constants: GronwallConstants,
    /// Fitted growth exponent of `A` in the adapted norms.
    pub a_fit: f64,
    pub inv_norm_upper: f64,
    pub gap_bound: f64,
    pub empirical_gap: f64,
    pub smallness: Smallness,
    pub before: DichotomyCertificate,
    pub seeds: Vec<SeedOutcome>,
    pub notes: Vec<String>,
}

impl RobustnessReport {
    pub fn all_strong(&self) -> bool {
        self.seeds.iter().all(SeedOutcome::strong)
    }

    /// Largest perturbed growth exponent over seeds.
    pub fn max_a_hat(&self) -> f64 {
        self.seeds.iter().filter_map(SeedOutcome::a_hat).fold(f64::NEG_INFINITY, f64::max)
    }

    /// `a + MCc` with `a` the fitted growth exponent of the unperturbed system.
    pub fn a_envelope(&self) -> f64 {
        self.a_fit + self.growth_constants.shift()
    }

    pub fn to_json(&self) -> Value {
        let gronwall_ok = self
            .seeds
            .iter()
            .all(|s| s.gronwall.as_ref().is_some_and(|g| g.ok && g.product_ok));
        let worst = self
            .seeds
            .iter()
            .filter_map(|s| s.gronwall.as_ref())
            .map(|g| g.worst_ratio)
            .fold(0.0, f64::max);
        let after = self
            .seeds
            .first()
            .and_then(|s| s.certificate.as_ref().ok())
            .map(DichotomyCertificate::to_json);
        json!({
            "c": num(self.c),
            "regime": self.regime.as_str(),
            "mode": self.mode,
            "epsilon": num(self.epsilon),
            "C": num(self.equivalence.0),
            "norm_epsilon": num(self.equivalence.1),
            "inv_norm_upper": num(self.inv_norm_upper),
            "inv_norm_is_estimate": true,
            "gap_bound": num(self.gap_bound),
            "empirical_gap": num(self.empirical_gap),
            "smallness_ok": self.smallness.ok,
            "smallness_margin": num(self.smallness.margin),
            "before": self.before.to_json(),
            "after": after,
            "gronwall": {
                "M": num(self.growth_constants.m),
                "a": num(self.growth_constants.a),
                "a_fit": num(self.a_fit),
                "shift": num(self.growth_constants.shift()),
                "ok": gronwall_ok,
                "worst_ratio": num(worst),
                "max_a_hat": num(self.max_a_hat()),
                "a_envelope": num(self.a_envelope()),
            },
            "all_strong": self.all_strong(),
            "seeds": self.seeds.iter().map(SeedOutcome::to_json).collect::<Vec<_>>(),
            "notes": self.notes,
        })
    }
}

/// Equivalence sample vectors: the basis plus seeded random unit vectors.
fn equivalence_samples(d: usize, count: usize) -> Vec<Vector> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut out: Vec<Vector> = (0..d).map(|i| Vector::from_fn(d, |j, _| if i == j { 1.0 } else { 0.0 })).collect();
    out.extend((0..count).map(|_| linalg::random_unit(&mut rng, d)));
    out
}

/// Full robustness pipeline.
///
/// Certifies `A` in the base norm, builds adapted norms from that certificate
/// (strong family in the strong regime), bounds `||T_Z^{-1}||` in them, then
/// for each seed perturbs, re-certifies, probes the operator gap and checks
/// the Gronwall envelope with `M = 3`, `a = b`.
pub fn robustness_experiment(
    seq: Arc<OperatorSequence>,
    spec: &PerturbationSpec,
    opts: &RobustnessOptions,
) -> Result<RobustnessReport> {
    spec.validate()?;
    let base = NormSequence::base(opts.base);
    let a = Arc::new(Cocycle::new(Arc::clone(&seq)));
    let before = certify(Arc::clone(&a), &base, &opts.dichotomy).map_err(|e| e.source)?;
    let mut notes = Vec::new();
    if !before.flags.strong {
        return Err(Error::Certificate(
            "the unperturbed system is not certified strong nonuniform".into(),
        ));
    }
    let epsilon = before.constants.epsilon;
    let split = Arc::clone(before.splitting());
    let lambda = before.nonuniform.lambda;
    let b = before.growth_base.b.max(lambda.min(1.0) * 1e-3);
    let horizon = seq.horizon();
    let norms = match spec.regime {
        Regime::Strong => NormSequence::adapted_strong(Arc::clone(&a), Arc::clone(&split), lambda, b, opts.base, horizon)?,
        Regime::Weak => {
            notes.push(
                "weak regime: only a nonuniform dichotomy is expected after perturbation; the strong flag is not asserted"
                    .into(),
            );
            NormSequence::adapted_nonuniform(Arc::clone(&a), Arc::clone(&split), lambda, opts.base, horizon)?
        }
    };
    let norm_eps = match spec.regime {
        Regime::Strong => 2.0 * epsilon,
        Regime::Weak => epsilon,
    };
    let indices = linalg::geometric_grid(1, horizon, 16);
    let eq = check_norm_equivalence(
        &norms,
        &equivalence_samples(seq.dimension(), opts.equivalence_samples),
        &indices,
        Some(norm_eps),
    )?;
    let norms = norms.with_equivalence(eq.c_hat, norm_eps);

    let t = TZOperator::new(Arc::clone(&a), &before.z_basis, norms.clone())?;
    let inv = invertibility_report(&t, Some(&split), &opts.dichotomy.report)?;
    notes.push("inv_norm_upper is a probe estimate in the adapted norms, not a proof".into());

    let quick = DichotomyOptions {
        admissibility: false,
        ..opts.dichotomy.clone()
    };
    let a_growth = fit_growth_bound(&a, &norms, &quick)?;
    let growth_constants = GronwallConstants {
        m: 3.0,
        a: norms.b().unwrap_or(a_growth.a),
        c_norm: eq.c_hat,
        c: spec.c,
    };
    if spec.regime == Regime::Weak {
        notes.push("weak regime: the Gronwall envelope uses the nonuniform norms and the fitted growth constants".into());
    }
    let growth_constants = if norms.b().is_none() {
        GronwallConstants {
            m: a_growth.m.max(1.0),
            a: a_growth.a,
            ..growth_constants
        }
    } else {
        growth_constants
    };

    let seeds = opts
        .seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| -> Result<SeedOutcome> {
            let s = PerturbationSpec {
                seed,
                epsilon,
                ..spec.clone()
            };
            let perturbed = Arc::new(perturb(&seq, &s, Some(&split))?);
            let bc = Arc::new(Cocycle::new(Arc::clone(&perturbed)));
            let gap = operator_gap(&a, &bc, &norms, &before.z_basis, &s)?;
            // the first seed is reported as `after`, so it gets the full pipeline
            let copts = if i == 0 { &opts.dichotomy } else { &quick };
            let certificate = certify(Arc::clone(&bc), &base, copts).map_err(|e| e.to_string());
            let deviation = certificate.as_ref().map_or(f64::INFINITY, |c| {
                (c.constants.d - before.constants.d)
                    .abs()
                    .max((c.constants.lambda - before.constants.lambda).abs())
                    .max((c.constants.epsilon - before.constants.epsilon).abs())
            });
            let growth = fit_growth_bound(&bc, &norms, &quick).ok();
            let gronwall = Some(gronwall_growth_check(&bc, &norms, &growth_constants)?);
            Ok(SeedOutcome {
                seed,
                budget_ratio: budget_ratio(&seq, &perturbed, &s),
                gap,
                certificate,
                growth,
                gronwall,
                deviation,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let gap_bound = seeds.first().map_or(0.0, |s| s.gap.gap_bound);
    let empirical_gap = seeds.iter().map(|s| s.gap.empirical_gap).fold(0.0, f64::max);
    Ok(RobustnessReport {
        c: spec.c,
        regime: spec.regime,
        mode: spec.mode.as_str(),
        epsilon,
        equivalence: (eq.c_hat, norm_eps),
        growth_constants,
        a_fit: a_growth.a,
        inv_norm_upper: inv.inv_norm_upper,
        gap_bound,
        empirical_gap,
        smallness: smallness_condition(gap_bound, inv.inv_norm_upper),
        before,
        seeds,
        notes,
    })
}
