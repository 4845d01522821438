//! Stable/unstable splittings, dichotomy constants and certification.
//!
//! The stable space `X(n)` is detected by regressing per-direction growth
//! exponents of the right singular vectors of `A(N, n)`. The certified
//! splitting is then built so that it is equivariant by construction:
//! `Z(n)` is the forward image of `Z = Z(1)` and `X(n)` is the preimage
//! under `A(N, n)` of `Z(N)^perp`.

use std::f64::consts::E;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::admissibility::{invertibility_report, InvertibilityReport, ReportOptions, TZOperator};
use crate::error::{Error, Result};
use crate::io::{matrix_json, num};
use crate::linalg::{self, Matrix, Vector};
use crate::norms::{BaseNorm, NormKind, NormSequence};
use crate::splitting::{backward_chain, oblique_projection, Splitting};
use crate::system::Cocycle;

/// Tuning knobs of the certification pipeline.
#[derive(Clone, Debug)]
pub struct DichotomyOptions {
    /// Growth exponents inside `[-margin, margin]` mean no spectral gap.
    pub margin: f64,
    /// Points of the geometric `m`-grid used for direction slopes.
    pub slope_points: usize,
    /// Points of the `n`-grid on which the stable dimension is voted.
    pub class_points: usize,
    /// Nonuniformity below this counts as uniform.
    pub epsilon_tol: f64,
    /// Largest nonuniformity exponent accepted for the strong flag.
    pub max_epsilon: f64,
    /// Rate reported when no decaying pair is observed.
    pub lambda_cap: f64,
    /// Fitted rates at or below this raise `NoPolynomialDecay`.
    pub min_rate: f64,
    /// Points of the `n`-grid used for the nonuniformity regression.
    pub eps_points: usize,
    /// Points per axis of the pair grid used with sampled norms.
    pub pair_points: usize,
    /// Directions per side for non-Euclidean `gamma` searches.
    pub gamma_grid: usize,
    /// Run the admissibility stage.
    pub admissibility: bool,
    pub report: ReportOptions,
    /// Replaces the default choice `Z = X(1)^perp`.
    pub z_override: Option<Matrix>,
}

impl Default for DichotomyOptions {
    fn default() -> Self {
        DichotomyOptions {
            margin: 0.1,
            slope_points: 24,
            class_points: 12,
            epsilon_tol: 0.05,
            max_epsilon: 0.5,
            lambda_cap: 2.0,
            min_rate: 1e-6,
            eps_points: 24,
            pair_points: 16,
            gamma_grid: 128,
            admissibility: true,
            report: ReportOptions::default(),
            z_override: None,
        }
    }
}

// ---------------------------------------------------------------------------
// subspaces

/// Numerical `X(n)` and `Z(n)` at one time.
#[derive(Clone, Debug)]
pub struct SubspacePair {
    pub n: usize,
    pub stable_basis: Matrix,
    pub unstable_basis: Matrix,
    /// Fitted growth exponents of the classified directions.
    pub scores: Vec<f64>,
}

/// Direction classification at one time.
#[derive(Clone, Debug)]
pub struct Classification {
    pub n: usize,
    pub stable_basis: Matrix,
    pub unstable_basis: Matrix,
    /// Slope per right singular vector of `A(N, n)` (descending singular values).
    pub slopes: Vec<f64>,
}

/// Orbit growth exponent of `v` from time `n`: slope of `log ||A(m,n)v||_m`
/// against `log(m/n)` on a geometric grid; `-inf` when the orbit vanishes.
fn direction_slope(c: &Cocycle, norms: &NormSequence, n: usize, top: usize, v: &Vector, points: usize) -> Result<f64> {
    let orbit = c.orbit_of(n, v)?;
    let grid = linalg::geometric_grid(n, top, points);
    let mut xs = Vec::with_capacity(grid.len());
    let mut ys = Vec::with_capacity(grid.len());
    for m in grid {
        let w = &orbit[m - n];
        let nw = norms.eval(m, w)?;
        if nw == 0.0 || !nw.is_finite() {
            return Ok(f64::NEG_INFINITY);
        }
        xs.push((m as f64 / n as f64).ln());
        ys.push(nw.ln());
    }
    Ok(linalg::linear_fit(&xs, &ys).0)
}

fn top_index(c: &Cocycle, norms: &NormSequence) -> usize {
    norms.max_index().map_or(c.horizon(), |h| h.min(c.horizon()))
}

/// Classifies the right singular vectors of `A(N, n)` by growth exponent.
pub fn classify(c: &Cocycle, norms: &NormSequence, n: usize, margin: f64, points: usize) -> Result<Classification> {
    let top = top_index(c, norms);
    if n == 0 || 2 * n > top {
        return Err(Error::Config(format!(
            "stable subspace at n = {n} needs n <= N/2 = {}",
            top / 2
        )));
    }
    let d = c.dimension();
    let a = c.eval(top, n)?;
    let svd = a.svd(false, true);
    let vt = svd.v_t.ok_or_else(|| Error::Singular("SVD failed".into()))?;
    let mut slopes = Vec::with_capacity(d);
    let mut stable = Vec::new();
    let mut unstable = Vec::new();
    for i in 0..d {
        let v = vt.row(i).transpose();
        let s = direction_slope(c, norms, n, top, &v, points)?;
        if s.abs() <= margin {
            return Err(Error::NoSpectralGap { n, slope: s, margin });
        }
        if s < 0.0 {
            stable.push(v);
        } else {
            unstable.push(v);
        }
        slopes.push(s);
    }
    let cols = |vs: &[Vector]| {
        if vs.is_empty() {
            Matrix::zeros(d, 0)
        } else {
            Matrix::from_columns(vs)
        }
    };
    Ok(Classification {
        n,
        stable_basis: cols(&stable),
        unstable_basis: cols(&unstable),
        slopes,
    })
}

/// Orthonormal basis of the numerical `X(n)`.
pub fn stable_subspace(c: &Cocycle, norms: &NormSequence, n: usize, margin: f64) -> Result<Matrix> {
    Ok(classify(c, norms, n, margin, 24)?.stable_basis)
}

/// Orthonormal basis of `Z(n) = A(n,1) Z`, propagated one step at a time.
pub fn unstable_subspace(c: &Cocycle, z: &Matrix, n: usize) -> Result<Matrix> {
    Ok(unstable_bundle(c, z, n)?.pop().expect("n >= 1"))
}

/// `[Z(1), ..., Z(upto)]`, each orthonormal.
fn unstable_bundle(c: &Cocycle, z: &Matrix, upto: usize) -> Result<Vec<Matrix>> {
    if upto == 0 || upto > c.horizon() {
        return Err(Error::range("n", upto, 1, c.horizon()));
    }
    let d = c.dimension();
    // an orthonormal Z is kept verbatim so that Z(1) = Z exactly
    let orthonormal = (z.transpose() * z - Matrix::identity(z.ncols(), z.ncols())).amax() < 1e-14;
    let mut u = if orthonormal { z.clone() } else { linalg::orthonormal_basis(z, 1e-12).0 };
    if u.ncols() != z.ncols() {
        return Err(Error::UnstableImageDegenerate { n: 1, rcond: 0.0 });
    }
    let k = u.ncols();
    let mut out = Vec::with_capacity(upto);
    out.push(u.clone());
    for n in 1..upto {
        if k == 0 {
            out.push(Matrix::zeros(d, 0));
            continue;
        }
        let img = c.sequence().a(n) * &u;
        let rc = if linalg::spectral_norm(&img) == 0.0 { 0.0 } else { linalg::rcond(&img) };
        if rc < 1e-12 {
            return Err(Error::UnstableImageDegenerate { n: n + 1, rcond: rc });
        }
        u = linalg::orthonormal_basis(&img, 1e-14).0;
        out.push(u.clone());
    }
    Ok(out)
}

/// Projection onto the stable basis along the unstable one.
pub fn splitting_projection(pair: &SubspacePair) -> Result<Matrix> {
    oblique_projection(&pair.stable_basis, &pair.unstable_basis, pair.n)
}

/// `max_m ||A_m P_m - P_{m+1} A_m|| / max(1, ||A_m||)`.
pub fn verify_equivariance(split: &Splitting, c: &Cocycle) -> f64 {
    split.equivariance_residual(c.sequence()).0
}

/// Equivariant splitting from `Z(n)` and the preimages of `Z(N)^perp`.
fn build_splitting(c: &Cocycle, unstable: Vec<Matrix>) -> Result<Splitting> {
    let horizon = unstable.len();
    let d = c.dimension();
    let du = unstable[0].ncols();
    let mut stable = vec![Matrix::zeros(d, d - du); horizon];
    // V_n spans A(N,n)^T Z(N); X(n) = V_n^perp
    let mut v = unstable[horizon - 1].clone();
    stable[horizon - 1] = linalg::orthogonal_complement(&v);
    for n in (1..horizon).rev() {
        if du > 0 {
            let pulled = c.sequence().a(n).transpose() * &v;
            let (basis, _) = linalg::orthonormal_basis(&pulled, 1e-13);
            if basis.ncols() != du {
                return Err(Error::Transversality { n, sigma_min: 0.0 });
            }
            v = basis;
        }
        stable[n - 1] = linalg::orthogonal_complement(&v);
    }
    Splitting::from_bases(stable, unstable)
}

// ---------------------------------------------------------------------------
// constant fitting

/// Which operator-norm family a fit runs on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Quantity {
    /// `||A(m,n) P_n||`, `m >= n`, ratio `m/n`.
    Stable,
    /// `||A(m,n) Q_n||`, `m <= n`, ratio `n/m`.
    Unstable,
    /// `||A(m,n)||`, `m >= n`, ratio `m/n`.
    Growth,
}

/// Operator norms along the pairs with a fixed initial time.
struct PerN {
    n: usize,
    /// `(log ratio, value)`.
    pts: Vec<(f64, f64)>,
}

fn n_set(top: usize, exact: bool, opts: &DichotomyOptions) -> Vec<usize> {
    if !exact {
        return linalg::geometric_grid(1, top, opts.pair_points);
    }
    if top <= 512 {
        return (1..=top).collect();
    }
    let mut out: Vec<usize> = (1..=64).collect();
    out.extend(linalg::geometric_grid(65, top, 256));
    out.dedup();
    out
}

fn gather(
    c: &Cocycle,
    split: Option<&Splitting>,
    steps: Option<&[Matrix]>,
    norms: &NormSequence,
    q: Quantity,
    opts: &DichotomyOptions,
) -> Result<Vec<PerN>> {
    let top = top_index(c, norms);
    let exact = norms.is_exact();
    let seq = c.sequence();
    let d = c.dimension();
    let ns = n_set(top, exact, opts);
    ns.par_iter()
        .map(|&n| -> Result<PerN> {
            let nf = n as f64;
            let ms: Vec<usize> = match (q, exact) {
                (Quantity::Unstable, true) => (1..=n).collect(),
                (Quantity::Unstable, false) => linalg::geometric_grid(1, n, opts.pair_points),
                (_, true) => (n..=top).collect(),
                (_, false) => linalg::geometric_grid(n, top, opts.pair_points),
            };
            let mut pts = Vec::with_capacity(ms.len());
            match q {
                Quantity::Stable | Quantity::Growth => {
                    let split = split.filter(|_| q == Quantity::Stable);
                    let mut f = match split {
                        Some(s) => s.p(n)?.clone(),
                        None => Matrix::identity(d, d),
                    };
                    let mut next = ms.iter().peekable();
                    for m in n..=top {
                        if m > n {
                            f = seq.a(m - 1) * f;
                            if let Some(s) = split {
                                f = s.p(m)? * f;
                            }
                        }
                        if next.peek() == Some(&&m) {
                            next.next();
                            pts.push(((m as f64 / nf).ln(), norms.op_norm(m, n, &f)?));
                        }
                        if next.peek().is_none() {
                            break;
                        }
                    }
                }
                Quantity::Unstable => {
                    let s = split.expect("unstable fits need a splitting");
                    let chain = backward_chain(steps.expect("step inverses"), &s.q(n)?, n);
                    for m in ms {
                        pts.push(((nf / m as f64).ln(), norms.op_norm(m, n, &chain[m - 1])?));
                    }
                }
            }
            Ok(PerN { n, pts })
        })
        .collect()
}

/// Pooled within-`n` regression slope of `log v` on `log ratio`; `None`
/// without usable variation.
fn pooled_slope(data: &[PerN]) -> Option<f64> {
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for row in data {
        let pts: Vec<(f64, f64)> = row
            .pts
            .iter()
            .filter(|(_, v)| *v > 0.0)
            .map(|(x, v)| (*x, v.ln()))
            .collect();
        if pts.len() < 2 {
            continue;
        }
        let k = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
        for (x, y) in pts {
            sxx += (x - mx) * (x - mx);
            sxy += (x - mx) * (y - my);
        }
    }
    (sxx > 1e-300).then(|| sxy / sxx)
}

/// Nonuniformity exponent: slope of the running max of
/// `r_n = max_m (log v - e log ratio)` against `log n` on `[2, N/2]`.
fn fit_epsilon(data: &[PerN], exponent: f64, top: usize, points: usize) -> f64 {
    let mut rows: Vec<(usize, f64)> = data
        .iter()
        .filter_map(|row| {
            row.pts
                .iter()
                .filter(|(_, v)| *v > 0.0)
                .map(|(x, v)| v.ln() - exponent * x)
                .reduce(f64::max)
                .map(|r| (row.n, r))
        })
        .collect();
    rows.sort_by_key(|r| r.0);
    let mut running = f64::NEG_INFINITY;
    let mut envelope = Vec::with_capacity(rows.len());
    for (n, r) in rows {
        running = running.max(r);
        envelope.push((n, running));
    }
    if top < 8 {
        return 0.0;
    }
    let grid = linalg::geometric_grid(2, top / 2, points);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for g in grid {
        // last envelope entry at or before g
        let idx = envelope.partition_point(|(n, _)| *n <= g);
        if idx == 0 {
            continue;
        }
        let (n, r) = envelope[idx - 1];
        if n < 2 || xs.last() == Some(&(n as f64).ln()) {
            continue;
        }
        xs.push((n as f64).ln());
        ys.push(r);
    }
    if xs.len() < 3 {
        return 0.0;
    }
    linalg::linear_fit(&xs, &ys).0.max(0.0)
}

/// `max v ratio^{-e} n^{-eps}` over the data and the worst pair.
fn close_constant(data: &[PerN], exponent: f64, eps: f64) -> f64 {
    data.iter()
        .flat_map(|row| {
            let ln_n = (row.n as f64).ln();
            row.pts
                .iter()
                .filter(|(_, v)| *v > 0.0)
                .map(move |(x, v)| (v.ln() - exponent * x - eps * ln_n).exp())
        })
        .fold(0.0, f64::max)
}

/// Dichotomy constants for one side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SideFit {
    pub d: f64,
    pub lambda: f64,
    pub epsilon: f64,
    /// `D` closing the inequality with `epsilon = 0`.
    pub d_uniform: f64,
    pub pairs: usize,
}

fn fit_side(data: &[PerN], top: usize, opts: &DichotomyOptions) -> SideFit {
    let lambda = pooled_slope(data).map_or(opts.lambda_cap, |s| (-s).min(opts.lambda_cap));
    let epsilon = fit_epsilon(data, -lambda, top, opts.eps_points);
    SideFit {
        d: close_constant(data, -lambda, epsilon),
        lambda,
        epsilon,
        d_uniform: close_constant(data, -lambda, 0.0),
        pairs: data.iter().map(|r| r.pts.len()).sum(),
    }
}

/// Reconciled `(d1)/(d2)` constants: max `D`, min `lambda`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConstantsFit {
    pub d: f64,
    pub lambda: f64,
    /// Nonuniformity exponent measured in the same norms.
    pub epsilon: f64,
    /// `D` matching `epsilon`.
    pub d_eps: f64,
    pub stable: SideFit,
    pub unstable: SideFit,
    /// Max violation of the fitted inequalities on the grid (zero by construction).
    pub residual: f64,
}

impl ConstantsFit {
    fn from_sides(stable: SideFit, unstable: SideFit, stable_dim: usize, unstable_dim: usize) -> Self {
        let sides: Vec<&SideFit> = [(stable_dim > 0, &stable), (unstable_dim > 0, &unstable)]
            .into_iter()
            .filter_map(|(keep, s)| keep.then_some(s))
            .collect();
        let lambda = sides.iter().map(|s| s.lambda).fold(f64::INFINITY, f64::min);
        let epsilon = sides.iter().map(|s| s.epsilon).fold(0.0, f64::max);
        ConstantsFit {
            d: 0.0,
            lambda,
            epsilon,
            d_eps: 0.0,
            stable,
            unstable,
            residual: 0.0,
        }
    }
}

fn fit_both_sides(
    c: &Cocycle,
    split: &Splitting,
    norms: &NormSequence,
    opts: &DichotomyOptions,
) -> Result<ConstantsFit> {
    let top = top_index(c, norms);
    let steps = split.unstable_step_inverses(c.sequence())?;
    let s_data = gather(c, Some(split), Some(&steps), norms, Quantity::Stable, opts)?;
    let u_data = gather(c, Some(split), Some(&steps), norms, Quantity::Unstable, opts)?;
    let (ds, du) = (split.stable_dim(), split.unstable_dim());
    let mut fit = ConstantsFit::from_sides(fit_side(&s_data, top, opts), fit_side(&u_data, top, opts), ds, du);
    if fit.lambda.is_nan() || fit.lambda <= opts.min_rate {
        let which = if ds > 0 && fit.stable.lambda <= opts.min_rate {
            "stable"
        } else {
            "unstable"
        };
        return Err(Error::NoPolynomialDecay { rate: fit.lambda, which });
    }
    // close D at the reconciled rate so a single (D, lambda) covers both sides
    let lam = fit.lambda;
    let eps = fit.epsilon;
    let close = |data: &[PerN], e: f64| close_constant(data, -lam, e);
    fit.d = close(&s_data, 0.0).max(close(&u_data, 0.0));
    fit.d_eps = close(&s_data, eps).max(close(&u_data, eps));
    let violation = |data: &[PerN]| {
        data.iter()
            .flat_map(|row| row.pts.iter().map(|(x, v)| v - fit.d * (-lam * x).exp()))
            .fold(0.0, f64::max)
    };
    fit.residual = violation(&s_data).max(violation(&u_data));
    Ok(fit)
}

/// `(D, lambda)` of `(d1)/(d2)` in the given norms.
pub fn fit_constants(c: &Cocycle, norms: &NormSequence, split: &Splitting, opts: &DichotomyOptions) -> Result<ConstantsFit> {
    fit_both_sides(c, split, norms, opts)
}

/// `(D, lambda, eps)` of the nonuniform decay bounds, measured in the base norm.
pub fn fit_nonuniform_constants(
    c: &Cocycle,
    base: BaseNorm,
    split: &Splitting,
    opts: &DichotomyOptions,
) -> Result<ConstantsFit> {
    fit_both_sides(c, split, &NormSequence::base(base), opts)
}

/// Growth bound in the given norms and nonuniform growth bound in the base norm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GrowthReport {
    pub m: f64,
    pub a: f64,
    /// Nonuniformity of the growth fit; a uniform bound needs it to vanish.
    pub epsilon_growth: f64,
    pub k: f64,
    pub b: f64,
    pub epsilon_base_growth: f64,
    pub bounded: bool,
    /// Index maximising `||A_n||`.
    pub witness: usize,
    pub max_step_norm: f64,
    /// Growth exponent of the running max of `||A_n||` in `n`.
    pub step_growth: f64,
}

fn step_growth(c: &Cocycle, norms: &NormSequence, opts: &DichotomyOptions) -> Result<(f64, usize, f64)> {
    let top = top_index(c, norms);
    if top < 2 {
        return Ok((0.0, 1, 0.0));
    }
    let ns: Vec<usize> = if norms.is_exact() {
        (1..top).collect()
    } else {
        linalg::geometric_grid(1, top - 1, opts.eps_points)
    };
    let vals = ns
        .par_iter()
        .map(|&n| norms.op_norm(n + 1, n, c.sequence().a(n)).map(|v| (n, v)))
        .collect::<Result<Vec<_>>>()?;
    let (witness, max_norm) = vals.iter().fold((1, 0.0), |acc, &(n, v)| if v > acc.1 { (n, v) } else { acc });
    // steps of norm below one never hurt the growth bound; the tail window ignores
    // transients that settle as n grows
    let lo = (top / 16).max(2);
    let mut running = 0.0f64;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &(n, v) in &vals {
        if v > 0.0 {
            running = running.max(v.ln());
        }
        if n >= lo {
            xs.push((n as f64).ln());
            ys.push(running);
        }
    }
    let slope = if xs.len() >= 3 { linalg::linear_fit(&xs, &ys).0.max(0.0) } else { 0.0 };
    Ok((max_norm, witness, slope))
}

fn fit_growth(data: &[PerN], top: usize, opts: &DichotomyOptions) -> (f64, f64, f64) {
    let a = pooled_slope(data).unwrap_or(0.0).max(0.0);
    let eps = fit_epsilon(data, a, top, opts.eps_points);
    (close_constant(data, a, eps), a, eps)
}

/// Fits `(M, a)` of `||A(m,n)|| <= M (m/n)^a` in `norms` and `(K, b, eps)` of
/// `||A(m,n)|| <= K (m/n)^b n^eps` in the base norm.
///
/// `bounded` is false when either the one-step norms or the growth constant
/// grow polynomially in the initial time, with `witness` the index of the
/// largest `||A_n||`.
pub fn fit_growth_bound(c: &Cocycle, norms: &NormSequence, opts: &DichotomyOptions) -> Result<GrowthReport> {
    let top = top_index(c, norms);
    let data = gather(c, None, None, norms, Quantity::Growth, opts)?;
    let (m, a, epsilon_growth) = fit_growth(&data, top, opts);
    let base = norms.base_family();
    let (k, b, epsilon_base_growth) = if norms.kind() == NormKind::Base {
        (m, a, epsilon_growth)
    } else {
        let base_data = gather(c, None, None, &base, Quantity::Growth, opts)?;
        fit_growth(&base_data, c.horizon(), opts)
    };
    let (max_step_norm, witness, step) = step_growth(c, norms, opts)?;
    Ok(GrowthReport {
        m,
        a,
        epsilon_growth,
        k,
        b,
        epsilon_base_growth,
        bounded: epsilon_growth <= opts.epsilon_tol && step <= opts.epsilon_tol,
        witness,
        max_step_norm,
        step_growth: step,
    })
}

// ---------------------------------------------------------------------------
// gamma

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GammaEntry {
    pub n: usize,
    pub gamma: f64,
    /// `||P_n||` in the configured norms.
    pub proj_norm: f64,
    /// `2 / gamma`.
    pub proj_bound: f64,
    /// False when the estimate comes from a search that did not settle.
    pub converged: bool,
}

/// Unit vectors (in `||.||_n`) of the span of `basis`, sampled.
fn sphere_samples(basis: &Matrix, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vector> {
    let k = basis.ncols();
    match k {
        0 => Vec::new(),
        1 => vec![basis.column(0).into_owned(), -basis.column(0).into_owned()],
        2 => (0..count)
            .map(|i| {
                let t = std::f64::consts::TAU * i as f64 / count as f64;
                basis.column(0) * t.cos() + basis.column(1) * t.sin()
            })
            .collect(),
        _ => (0..count * k).map(|_| basis * linalg::random_unit(rng, k)).collect(),
    }
}

/// `gamma_n = inf { ||v_s + v_u||_n : ||v_s||_n = ||v_u||_n = 1 }`.
///
/// Euclidean base norms use principal angles, `gamma = 2 sin(theta_min/2)`;
/// other norms a grid search with local refinement. Trivial parts give 2.
pub fn gamma(pair: &SubspacePair, norms: &NormSequence, grid: usize) -> Result<(f64, bool)> {
    let (s, u) = (&pair.stable_basis, &pair.unstable_basis);
    if s.ncols() == 0 || u.ncols() == 0 {
        return Ok((2.0, true));
    }
    if norms.kind() == NormKind::Base && norms.base_norm() == BaseNorm::Euclidean {
        let cos_max = linalg::principal_cosines(s, u).into_iter().fold(0.0, f64::max).min(1.0);
        let theta = cos_max.acos();
        return Ok((2.0 * (theta / 2.0).sin(), true));
    }
    let n = pair.n;
    let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
    let unit = |v: &Vector| -> Result<Vector> { Ok(v / norms.eval(n, v)?) };
    let ss = sphere_samples(s, grid, &mut rng)
        .iter()
        .map(unit)
        .collect::<Result<Vec<_>>>()?;
    let us = sphere_samples(u, grid, &mut rng)
        .iter()
        .map(unit)
        .collect::<Result<Vec<_>>>()?;
    let mut best = (f64::INFINITY, Vector::zeros(s.ncols()), Vector::zeros(u.ncols()));
    for a in &ss {
        for b in &us {
            let v = norms.eval(n, &(a + b))?;
            if v < best.0 {
                best = (v, s.transpose() * a, u.transpose() * b);
            }
        }
    }
    // refine in subspace coordinates
    let (mut val, mut ca, mut cb) = best;
    let mut step = 0.25;
    let mut rounds = 0;
    while step > 1e-7 && rounds < 400 {
        rounds += 1;
        let mut improved = false;
        for _ in 0..8 {
            let ta = &ca + linalg::random_unit(&mut rng, ca.len()) * step;
            let tb = &cb + linalg::random_unit(&mut rng, cb.len()) * step;
            let va = s * &ta;
            let vb = u * &tb;
            let (na, nb) = (norms.eval(n, &va)?, norms.eval(n, &vb)?);
            if na == 0.0 || nb == 0.0 {
                continue;
            }
            let v = norms.eval(n, &(va / na + vb / nb))?;
            if v < val {
                val = v;
                ca = ta / na;
                cb = tb / nb;
                improved = true;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok((val, step <= 1e-7))
}

/// Smallest `N0` with `(1/D) N0^lambda > D N0^{-lambda}` and the resulting
/// lower bound `c = ((1/D) N0^lambda - D N0^{-lambda}) / (M N0^a)` on `gamma_n`.
pub fn gamma_lower_bound(d: f64, lambda: f64, m: f64, a: f64) -> (f64, f64) {
    let threshold = d.powf(1.0 / lambda);
    let n0 = if threshold.is_finite() { threshold.floor() + 1.0 } else { f64::INFINITY };
    let c = (n0.powf(lambda) / d - d * n0.powf(-lambda)) / (m * n0.powf(a));
    (n0, if c.is_finite() { c } else { 0.0 })
}

/// Constants produced by the constructive route from admissibility to a dichotomy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProofRoute {
    pub l: f64,
    pub log_n0: f64,
    pub lambda: f64,
    pub d: f64,
}

/// `L = max{M 2^a, M 2^{a+1} ||T^-1||}`, `log N0 = 1 + e L ||T^-1||`,
/// `lambda = 1/log N0`, `D = L e`.
pub fn proof_route(m: f64, a: f64, inv_norm: f64) -> ProofRoute {
    let l = (m * 2f64.powf(a)).max(m * 2f64.powf(a + 1.0) * inv_norm);
    let log_n0 = 1.0 + E * l * inv_norm;
    ProofRoute {
        l,
        log_n0,
        lambda: 1.0 / log_n0,
        d: l * E,
    }
}

// ---------------------------------------------------------------------------
// Lyapunov exponents

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LyapunovEstimate {
    /// `-inf` when the orbit vanishes inside the window.
    pub slope: f64,
    pub r_squared: f64,
    pub window: (usize, usize),
    pub vanished: bool,
}

/// Least-squares slope of `log ||A(n,1) v||` against `log n` over `window`.
pub fn polynomial_lyapunov_exponent(c: &Cocycle, v: &Vector, window: (usize, usize)) -> Result<LyapunovEstimate> {
    let (lo, hi) = window;
    if lo == 0 || hi > c.horizon() || lo >= hi {
        return Err(Error::Config(format!(
            "window {lo}..{hi} must satisfy 1 <= lo < hi <= {}",
            c.horizon()
        )));
    }
    let orbit = c.orbit_of(1, v)?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for n in linalg::geometric_grid(lo, hi, 32) {
        let w = orbit[n - 1].norm();
        if w == 0.0 {
            return Ok(LyapunovEstimate {
                slope: f64::NEG_INFINITY,
                r_squared: 0.0,
                window,
                vanished: true,
            });
        }
        xs.push((n as f64).ln());
        ys.push(w.ln());
    }
    let (slope, _, r2) = linalg::linear_fit(&xs, &ys);
    Ok(LyapunovEstimate {
        slope,
        r_squared: r2,
        window,
        vanished: false,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LyapunovReport {
    pub estimates: Vec<LyapunovEstimate>,
    /// `-1`, `0` or `1` per vector, with `0` inside the margin.
    pub signs: Vec<i8>,
}

/// Exponents of the columns of `vectors`.
pub fn lyapunov_report(c: &Cocycle, vectors: &Matrix, window: (usize, usize), margin: f64) -> Result<LyapunovReport> {
    let estimates = (0..vectors.ncols())
        .map(|i| polynomial_lyapunov_exponent(c, &vectors.column(i).into_owned(), window))
        .collect::<Result<Vec<_>>>()?;
    let signs = estimates
        .iter()
        .map(|e| {
            if e.slope < -margin {
                -1
            } else if e.slope > margin {
                1
            } else {
                0
            }
        })
        .collect();
    Ok(LyapunovReport { estimates, signs })
}

/// Default window `[max(2, N/16), N]`.
pub fn default_window(horizon: usize) -> (usize, usize) {
    ((horizon / 16).max(2).min(horizon.saturating_sub(1).max(1)), horizon)
}

// ---------------------------------------------------------------------------
// certification

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Flags {
    pub dichotomy: bool,
    pub contraction: bool,
    pub expansion: bool,
    pub strong: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Constants {
    #[serde(rename = "D")]
    pub d: f64,
    pub lambda: f64,
    /// Reconciled nonuniformity: max over both decay fits and the growth fit.
    pub epsilon: f64,
    #[serde(rename = "M")]
    pub m: f64,
    pub a: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub b: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Residuals {
    pub equivariance: f64,
    pub idempotency: f64,
    /// Smallest `sigma_min([X(n) | Z(n)])`.
    pub transversality: f64,
    /// Largest gap between `A_n X(n)` and `X(n+1)`, and `A_n Z(n)` and `Z(n+1)`.
    pub invariance: f64,
    /// Gap between the classified `X(1)` and the certified one.
    pub stable_alignment: f64,
    pub d1_d2: f64,
    /// Largest `||P_n|| - 2/gamma_n` (nonpositive when the bound holds).
    pub projection_bound: f64,
}

/// A certified (or flag-refused) dichotomy on a finite horizon.
#[derive(Clone, Debug)]
pub struct DichotomyCertificate {
    pub dimension: usize,
    pub horizon: usize,
    pub stable_dim: usize,
    pub splitting: Arc<Splitting>,
    pub z_basis: Matrix,
    pub flags: Flags,
    pub constants: Constants,
    pub uniform: ConstantsFit,
    pub nonuniform: ConstantsFit,
    pub growth: GrowthReport,
    pub growth_base: GrowthReport,
    pub gamma: Vec<GammaEntry>,
    /// Lower bound `c` on `gamma_n` and its `N0`.
    pub gamma_lower: (f64, f64),
    pub proof_route: Option<ProofRoute>,
    pub n0: f64,
    pub residuals: Residuals,
    pub classification: Vec<(usize, usize)>,
    pub dissent: Vec<usize>,
    pub slopes_at_1: Vec<f64>,
    pub admissibility: Option<InvertibilityReport>,
    pub norm_kind: NormKind,
    pub diagnostics: Vec<String>,
    pub margin: f64,
}

impl DichotomyCertificate {
    pub fn splitting(&self) -> &Arc<Splitting> {
        &self.splitting
    }

    pub fn to_json(&self) -> Value {
        let gamma: Vec<Value> = self
            .gamma
            .iter()
            .map(|g| {
                json!({
                    "n": g.n,
                    "gamma": num(g.gamma),
                    "proj_norm": num(g.proj_norm),
                    "proj_bound": num(g.proj_bound),
                    "converged": g.converged,
                })
            })
            .collect();
        let fit_json = |f: &ConstantsFit| {
            json!({
                "D": num(f.d),
                "lambda": num(f.lambda),
                "epsilon": num(f.epsilon),
                "D_epsilon": num(f.d_eps),
                "stable": side_json(&f.stable),
                "unstable": side_json(&f.unstable),
            })
        };
        json!({
            "dimension": self.dimension,
            "horizon": self.horizon,
            "stable_dim": self.stable_dim,
            "flags": serde_json::to_value(self.flags).expect("flags serialize"),
            "constants": {
                "D": num(self.constants.d),
                "lambda": num(self.constants.lambda),
                "epsilon": num(self.constants.epsilon),
                "M": num(self.constants.m),
                "a": num(self.constants.a),
                "K": num(self.constants.k),
                "b": num(self.constants.b),
            },
            "nonuniform": fit_json(&self.nonuniform),
            "uniform": fit_json(&self.uniform),
            "growth": growth_json(&self.growth),
            "growth_base": growth_json(&self.growth_base),
            "projections": self.splitting.projections().iter().map(matrix_json).collect::<Vec<_>>(),
            "z_basis": {
                "rows": self.z_basis.nrows(),
                "cols": self.z_basis.ncols(),
                "entries": matrix_json(&self.z_basis),
            },
            "gamma": gamma,
            "gamma_lower_bound": {"c": num(self.gamma_lower.1), "N0": num(self.gamma_lower.0)},
            "proof_route": self.proof_route.map(|p| json!({
                "L": num(p.l), "log_N0": num(p.log_n0), "lambda": num(p.lambda), "D": num(p.d),
            })),
            "N0": num(self.n0),
            "residuals": {
                "equivariance": num(self.residuals.equivariance),
                "idempotency": num(self.residuals.idempotency),
                "transversality": num(self.residuals.transversality),
                "invariance": num(self.residuals.invariance),
                "stable_alignment": num(self.residuals.stable_alignment),
                "d1_d2": num(self.residuals.d1_d2),
                "projection_bound": num(self.residuals.projection_bound),
            },
            "grid": {
                "classification": self.classification.iter().map(|(n, ds)| json!([n, ds])).collect::<Vec<_>>(),
                "dissent": self.dissent,
                "margin": num(self.margin),
                "slopes_at_1": self.slopes_at_1.iter().map(|s| num(*s)).collect::<Vec<_>>(),
                "norms": serde_json::to_value(self.norm_kind).expect("kind serializes"),
            },
            "admissibility": self.admissibility.as_ref().map(InvertibilityReport::to_json),
            "diagnostics": self.diagnostics,
        })
    }
}

fn side_json(s: &SideFit) -> Value {
    json!({
        "D": num(s.d),
        "lambda": num(s.lambda),
        "epsilon": num(s.epsilon),
        "D_uniform": num(s.d_uniform),
        "pairs": s.pairs,
    })
}

fn growth_json(g: &GrowthReport) -> Value {
    json!({
        "M": num(g.m),
        "a": num(g.a),
        "epsilon_growth": num(g.epsilon_growth),
        "K": num(g.k),
        "b": num(g.b),
        "epsilon_base_growth": num(g.epsilon_base_growth),
        "bounded": g.bounded,
        "witness": g.witness,
        "max_step_norm": num(g.max_step_norm),
        "step_growth": num(g.step_growth),
    })
}

/// What was established before a certification stage failed.
#[derive(Clone, Debug, Default)]
pub struct PartialCertificate {
    pub growth: Option<GrowthReport>,
    pub stable_dim: Option<usize>,
    pub classification: Vec<(usize, usize)>,
    pub diagnostics: Vec<String>,
}

impl PartialCertificate {
    pub fn to_json(&self) -> Value {
        json!({
            "growth": self.growth.as_ref().map(growth_json),
            "stable_dim": self.stable_dim,
            "classification": self.classification.iter().map(|(n, ds)| json!([n, ds])).collect::<Vec<_>>(),
            "diagnostics": self.diagnostics,
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("certification failed at stage `{stage}`: {source}")]
pub struct CertifyError {
    pub stage: &'static str,
    #[source]
    pub source: Error,
    pub partial: Box<PartialCertificate>,
}

impl CertifyError {
    pub fn to_json(&self) -> Value {
        json!({
            "certified": false,
            "stage": self.stage,
            "error": self.source.to_string(),
            "partial": self.partial.to_json(),
        })
    }
}

struct Stages {
    partial: PartialCertificate,
}

impl Stages {
    fn run<T>(&mut self, stage: &'static str, r: Result<T>) -> std::result::Result<T, CertifyError> {
        r.map_err(|source| CertifyError {
            stage,
            source,
            partial: Box::new(std::mem::take(&mut self.partial)),
        })
    }
}

/// Winning dimension, `(n, d_s)` per grid point, dissenting `n`, and the
/// classification at `n = 1`.
type Vote = (usize, Vec<(usize, usize)>, Vec<usize>, Classification);

/// Votes the stable dimension over a grid of `n <= N/2`.
fn vote_dimension(c: &Cocycle, norms: &NormSequence, opts: &DichotomyOptions) -> Result<Vote> {
    let top = top_index(c, norms);
    let first = classify(c, norms, 1, opts.margin, opts.slope_points)?;
    let grid = linalg::geometric_grid(1, (top / 2).max(1), opts.class_points);
    let results: Vec<(usize, Option<usize>)> = grid
        .par_iter()
        .map(|&n| {
            let ds = classify(c, norms, n, opts.margin, opts.slope_points)
                .ok()
                .map(|cl| cl.stable_basis.ncols());
            (n, ds)
        })
        .collect();
    let d = c.dimension();
    let mut counts = vec![0usize; d + 1];
    for (_, ds) in &results {
        if let Some(k) = ds {
            counts[*k] += 1;
        }
    }
    let failures = results.iter().filter(|(_, ds)| ds.is_none()).count();
    if 2 * failures > results.len() {
        // most of the grid has no detectable gap: report the first failure
        let n = results.iter().find(|(_, ds)| ds.is_none()).map(|r| r.0).unwrap_or(1);
        classify(c, norms, n, opts.margin, opts.slope_points)?;
    }
    let majority = (0..=d).max_by_key(|&k| (counts[k], k == first.stable_basis.ncols())).unwrap_or(0);
    let votes: Vec<(usize, usize)> = results.iter().filter_map(|(n, ds)| ds.map(|k| (*n, k))).collect();
    let dissent = results
        .iter()
        .filter(|(_, ds)| *ds != Some(majority))
        .map(|(n, _)| *n)
        .collect();
    Ok((majority, votes, dissent, first))
}

/// Full certification pipeline.
///
/// Stages: growth fit; stable-dimension vote and `Z`; unstable bundle;
/// equivariant splitting; constant fits in the configured and base norms;
/// `gamma` sweep; optional admissibility report. Each failure carries the
/// stage name and whatever was established before it.
pub fn certify(
    c: Arc<Cocycle>,
    norms: &NormSequence,
    opts: &DichotomyOptions,
) -> std::result::Result<DichotomyCertificate, CertifyError> {
    let mut st = Stages {
        partial: PartialCertificate::default(),
    };
    let d = c.dimension();
    let horizon = c.horizon();
    if horizon < 4 {
        return Err(st.run::<()>("input", Err(Error::Config("certification needs N >= 4".into()))).unwrap_err());
    }

    let growth = st.run("growth", fit_growth_bound(&c, norms, opts))?;
    st.partial.growth = Some(growth);
    if !growth.bounded {
        st.partial.diagnostics.push(format!(
            "growth bound fails: sup ||A_n|| grows (witness n = {}, ||A_n|| = {:.6e})",
            growth.witness, growth.max_step_norm
        ));
    }

    let (ds, votes, dissent, first) = st.run("stable_subspace", vote_dimension(&c, norms, opts))?;
    st.partial.stable_dim = Some(ds);
    st.partial.classification = votes.clone();
    if !dissent.is_empty() {
        st.partial.diagnostics.push(format!("stable dimension dissent at n = {dissent:?}"));
    }

    // Z: the most expanding right singular directions of A(N,1)
    let z = match &opts.z_override {
        Some(z) => z.clone(),
        None => {
            if first.stable_basis.ncols() == ds {
                first.unstable_basis.clone()
            } else {
                let a = st.run("stable_subspace", c.eval(top_index(&c, norms), 1))?;
                let vt = a.svd(false, true).v_t.expect("requested");
                let rows: Vec<Vector> = (0..d - ds).map(|i| vt.row(i).transpose()).collect();
                if rows.is_empty() {
                    Matrix::zeros(d, 0)
                } else {
                    Matrix::from_columns(&rows)
                }
            }
        }
    };
    if z.nrows() != d || z.ncols() + ds != d {
        return Err(st
            .run::<()>(
                "unstable_subspace",
                Err(Error::ZDimensionIncompatible(format!(
                    "Z has {} columns but the unstable dimension is {}",
                    z.ncols(),
                    d - ds
                ))),
            )
            .unwrap_err());
    }
    let unstable = st.run("unstable_subspace", unstable_bundle(&c, &z, horizon))?;
    let split = Arc::new(st.run("splitting", build_splitting(&c, unstable))?);

    let mut residuals = Residuals {
        equivariance: verify_equivariance(&split, &c),
        idempotency: split.idempotency_residual(),
        transversality: f64::INFINITY,
        ..Residuals::default()
    };
    if residuals.equivariance > 1e-8 {
        return Err(st
            .run::<()>(
                "equivariance",
                Err(Error::Certificate(format!(
                    "equivariance residual {:.3e} exceeds 1e-8",
                    residuals.equivariance
                ))),
            )
            .unwrap_err());
    }
    for n in 1..=horizon {
        let (s, u) = (split.stable_basis(n).expect("in range"), split.unstable_basis(n).expect("in range"));
        if s.ncols() > 0 && u.ncols() > 0 {
            let sv = linalg::singular_values(&linalg::hstack(s, u));
            residuals.transversality = residuals.transversality.min(*sv.last().expect("nonempty"));
        }
        if n < horizon {
            let a = c.sequence().a(n);
            let (s1, u1) = (split.stable_basis(n + 1).expect("in range"), split.unstable_basis(n + 1).expect("in range"));
            if s.ncols() > 0 {
                let (img, _) = linalg::orthonormal_basis(&(a * s), 1e-14);
                if img.ncols() == s1.ncols() {
                    residuals.invariance = residuals.invariance.max(linalg::subspace_distance(&img, s1));
                }
            }
            if u.ncols() > 0 {
                let (img, _) = linalg::orthonormal_basis(&(a * u), 1e-14);
                residuals.invariance = residuals.invariance.max(linalg::subspace_distance(&img, u1));
            }
        }
    }
    if opts.z_override.is_none() {
        residuals.stable_alignment =
            linalg::subspace_distance(&first.stable_basis, split.stable_basis(1).expect("in range"));
    }

    let uniform = st.run("fit_constants", fit_constants(&c, norms, &split, opts))?;
    residuals.d1_d2 = uniform.residual;
    let nonuniform = if norms.kind() == NormKind::Base {
        uniform
    } else {
        st.run("fit_nonuniform", fit_nonuniform_constants(&c, norms.base_norm(), &split, opts))?
    };
    let growth_base = if norms.kind() == NormKind::Base {
        growth
    } else {
        st.run("growth", fit_growth_bound(&c, &norms.base_family(), opts))?
    };

    // gamma sweep: every n for closed-form norms, a grid otherwise
    let closed_form = norms.kind() == NormKind::Base && norms.base_norm() == BaseNorm::Euclidean;
    let top = top_index(&c, norms);
    let gamma_ns: Vec<usize> = if closed_form {
        (1..=top).collect()
    } else {
        linalg::geometric_grid(1, top, 24)
    };
    let gammas = st.run(
        "gamma",
        gamma_ns
            .par_iter()
            .map(|&n| -> Result<GammaEntry> {
                let pair = SubspacePair {
                    n,
                    stable_basis: split.stable_basis(n)?.clone(),
                    unstable_basis: split.unstable_basis(n)?.clone(),
                    scores: Vec::new(),
                };
                let (g, converged) = gamma(&pair, norms, opts.gamma_grid)?;
                let proj_norm = norms.op_norm(n, n, split.p(n)?)?;
                Ok(GammaEntry {
                    n,
                    gamma: g,
                    proj_norm,
                    proj_bound: 2.0 / g,
                    converged,
                })
            })
            .collect::<Result<Vec<_>>>(),
    )?;
    residuals.projection_bound = gammas
        .iter()
        .map(|g| g.proj_norm - g.proj_bound)
        .fold(f64::NEG_INFINITY, f64::max);
    let gamma_lower = gamma_lower_bound(uniform.d, uniform.lambda, growth.m, growth.a.max(1e-12));
    let min_gamma = gammas.iter().map(|g| g.gamma).fold(f64::INFINITY, f64::min);
    let mut diagnostics = std::mem::take(&mut st.partial.diagnostics);
    if min_gamma < gamma_lower.1 - 1e-9 {
        diagnostics.push(format!(
            "gamma_n = {min_gamma:.6e} below the lower bound c = {:.6e}",
            gamma_lower.1
        ));
    }

    let admissibility = if opts.admissibility {
        let t = st.run("admissibility", TZOperator::new(Arc::clone(&c), &z, norms.clone()))?;
        Some(st.run("admissibility", invertibility_report(&t, Some(&split), &opts.report))?)
    } else {
        None
    };
    let proof = admissibility
        .as_ref()
        .filter(|r| r.invertible)
        .map(|r| proof_route(growth.m, growth.a.max(1e-12), r.inv_norm_upper));
    let n0 = proof.map_or(gamma_lower.0, |p| p.log_n0.exp().max(gamma_lower.0));

    let dichotomy = uniform.epsilon <= opts.epsilon_tol;
    let strong = nonuniform.lambda > opts.min_rate
        && nonuniform.epsilon <= opts.max_epsilon
        && growth_base.epsilon_base_growth <= opts.max_epsilon;
    if !dichotomy {
        diagnostics.push(format!(
            "constants depend on the initial time: epsilon = {:.4} in the configured norms",
            uniform.epsilon
        ));
    }
    let flags = Flags {
        dichotomy,
        contraction: dichotomy && ds == d,
        expansion: dichotomy && ds == 0,
        strong,
    };
    let epsilon = nonuniform.epsilon.max(growth_base.epsilon_base_growth);
    Ok(DichotomyCertificate {
        dimension: d,
        horizon,
        stable_dim: ds,
        splitting: split,
        z_basis: z,
        flags,
        constants: Constants {
            d: uniform.d,
            lambda: uniform.lambda,
            epsilon,
            m: growth.m,
            a: growth.a,
            k: growth_base.k,
            b: growth_base.b,
        },
        uniform,
        nonuniform,
        growth,
        growth_base,
        gamma: gammas,
        gamma_lower,
        proof_route: proof,
        n0,
        residuals,
        classification: votes,
        dissent,
        slopes_at_1: first.slopes,
        admissibility,
        norm_kind: norms.kind(),
        diagnostics,
        margin: opts.margin,
    })
}

// ---------------------------------------------------------------------------
// contraction / expansion

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContractionEvidence {
    pub holds: bool,
    pub bounded: bool,
    pub witness: usize,
    /// `(horizon, max ||x||_inf / ||y||_inf)` over the probe set.
    pub probe_sup: Vec<(usize, f64)>,
    pub stable_under_doubling: bool,
}

fn probe_rhs(d: usize, horizon: usize, count: usize, seed: u64) -> Vec<crate::admissibility::BoundedSequence> {
    use crate::admissibility::{BoundedSequence, SpaceTag};
    let mut out = Vec::with_capacity(count + d);
    for i in 0..d {
        let mut e = vec![Vector::from_fn(d, |j, _| if i == j { 1.0 } else { 0.0 }); horizon];
        e[0] = Vector::zeros(d);
        out.push(BoundedSequence::new(e, SpaceTag::Y0).expect("valid probe"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..count {
        let mut e: Vec<Vector> = (0..horizon).map(|_| linalg::random_unit(&mut rng, d)).collect();
        e[0] = Vector::zeros(d);
        out.push(BoundedSequence::new(e, SpaceTag::Y0).expect("valid probe"));
    }
    out
}

/// Contraction test: the growth bound holds and the contraction solutions of random
/// right-hand sides stay bounded as the horizon doubles.
pub fn check_contraction(c: &Cocycle, norms: &NormSequence, opts: &DichotomyOptions) -> Result<ContractionEvidence> {
    use crate::admissibility::{green_solve_contraction, BoundedSequence};
    let growth = fit_growth_bound(c, norms, opts)?;
    let horizon = c.horizon();
    let d = c.dimension();
    let probes = probe_rhs(d, horizon, 16, opts.report.seed);
    let mut probe_sup = Vec::new();
    for h in [horizon / 4, horizon / 2, horizon] {
        if h < 2 {
            continue;
        }
        let sub = Arc::new(Cocycle::new(Arc::new(c.sequence().truncate(h)?)));
        let t = TZOperator::new(sub, &Matrix::zeros(d, 0), norms.clone())?;
        let mut best: f64 = 0.0;
        for y in &probes {
            let y = BoundedSequence::new(y.entries()[..h].to_vec(), y.tag())?;
            let x = green_solve_contraction(&t, &y)?;
            best = best.max(x.sup_norm(norms)? / y.sup_norm(norms)?);
        }
        probe_sup.push((h, best));
    }
    let stable = match probe_sup.as_slice() {
        [.., (_, half), (_, full)] => full - half <= 0.1 * half.max(1.0),
        _ => true,
    };
    Ok(ContractionEvidence {
        holds: growth.bounded && stable,
        bounded: growth.bounded,
        witness: growth.witness,
        probe_sup,
        stable_under_doubling: stable,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExpansionEvidence {
    pub holds: bool,
    pub bounded: bool,
    pub slopes: Vec<f64>,
    pub all_expanding: bool,
    pub invertible: bool,
    /// `(horizon, inv_norm_upper)` for `N/2` and `N`.
    pub inv_norms: Vec<(usize, f64)>,
    pub stable_under_doubling: bool,
}

/// Expansion test: the growth bound holds, every direction expands, and `T_Z` with
/// `Z = R^d` (projections `P_n = 0`) is invertible with an inverse norm that
/// does not grow as the horizon doubles.
pub fn check_expansion(c: &Cocycle, norms: &NormSequence, opts: &DichotomyOptions) -> Result<ExpansionEvidence> {
    let growth = fit_growth_bound(c, norms, opts)?;
    let d = c.dimension();
    let horizon = c.horizon();
    let slopes = match classify(c, norms, 1, opts.margin, opts.slope_points) {
        Ok(cl) => cl.slopes,
        Err(Error::NoSpectralGap { slope, .. }) => vec![slope],
        Err(e) => return Err(e),
    };
    let all_expanding = slopes.iter().all(|s| *s > opts.margin);
    let mut inv_norms = Vec::new();
    let mut invertible = true;
    for h in [horizon / 2, horizon] {
        if h < 2 {
            continue;
        }
        let sub = Arc::new(Cocycle::new(Arc::new(c.sequence().truncate(h)?)));
        let t = TZOperator::new(sub, &Matrix::identity(d, d), norms.clone())?;
        let split = Splitting::expansion(d, h)?;
        let r = invertibility_report(&t, Some(&split), &opts.report)?;
        invertible &= r.invertible;
        inv_norms.push((h, r.inv_norm_upper));
    }
    let stable = match inv_norms.as_slice() {
        [(_, half), (_, full)] => full.is_finite() && *full <= 1.5 * half,
        _ => true,
    };
    Ok(ExpansionEvidence {
        holds: growth.bounded && all_expanding && invertible && stable,
        bounded: growth.bounded,
        slopes,
        all_expanding,
        invertible,
        inv_norms,
        stable_under_doubling: stable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{make_generator, GeneratorSpec};
    use approx::assert_relative_eq;
    use serde_json::json;

    fn cocycle(kind: &str, params: Value, d: usize, horizon: usize) -> Arc<Cocycle> {
        let seq = make_generator(&GeneratorSpec::new(kind, params), d, horizon).unwrap();
        Arc::new(Cocycle::new(Arc::new(seq)))
    }

    fn quick() -> DichotomyOptions {
        DichotomyOptions {
            admissibility: false,
            ..DichotomyOptions::default()
        }
    }

    #[test]
    fn diagonal_stable_subspace() {
        let c = cocycle("diagonal-poly", json!({"lambda": 1.0}), 2, 128);
        let cl = classify(&c, &NormSequence::euclidean(), 2, 0.1, 24).unwrap();
        assert_eq!(cl.stable_basis.ncols(), 1);
        assert_relative_eq!(cl.stable_basis[(0, 0)].abs(), 1.0, epsilon = 1e-12);
        let stable_slope = cl.slopes.iter().copied().fold(f64::INFINITY, f64::min);
        assert_relative_eq!(stable_slope, -1.0, epsilon = 1e-9);
    }

    #[test]
    fn identity_has_no_gap() {
        let c = cocycle("identity", json!({}), 2, 64);
        assert!(matches!(
            stable_subspace(&c, &NormSequence::euclidean(), 1, 0.1),
            Err(Error::NoSpectralGap { .. })
        ));
    }

    #[test]
    fn unstable_subspace_examples() {
        let c = cocycle("diagonal-poly", json!({"lambda": 1.0}), 2, 32);
        let z = Matrix::from_column_slice(2, 1, &[0.0, 1.0]);
        assert_eq!(unstable_subspace(&c, &z, 1).unwrap(), z);
        let z7 = unstable_subspace(&c, &z, 7).unwrap();
        assert_relative_eq!(z7[(1, 0)].abs(), 1.0, epsilon = 1e-15);
        assert_eq!(unstable_subspace(&c, &Matrix::zeros(2, 0), 5).unwrap().ncols(), 0);
    }

    #[test]
    fn oblique_pair_projection() {
        let pair = SubspacePair {
            n: 1,
            stable_basis: Matrix::from_column_slice(2, 1, &[1.0, 0.0]),
            unstable_basis: Matrix::from_column_slice(2, 1, &[1.0, 1.0]) / 2f64.sqrt(),
            scores: vec![],
        };
        let p = splitting_projection(&pair).unwrap();
        assert_relative_eq!(p, Matrix::from_row_slice(2, 2, &[1.0, -1.0, 0.0, 0.0]), epsilon = 1e-14);
    }

    #[test]
    fn corrupted_projection_localises_residual() {
        let c = cocycle("diagonal-poly", json!({"lambda": 1.0}), 2, 16);
        let split = Splitting::axis(2, 16, 1).unwrap();
        assert_eq!(verify_equivariance(&split, &c), 0.0);
        let bad = split
            .with_projection(3, Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 0.0]))
            .unwrap();
        let (r, at) = bad.equivariance_residual(c.sequence());
        assert!(r > 0.0);
        assert!(at == 2 || at == 3);
    }

    #[test]
    fn diagonal_constants_are_exact() {
        let c = cocycle("diagonal-poly", json!({"lambda": 1.0}), 2, 128);
        let split = Splitting::axis(2, 128, 1).unwrap();
        let fit = fit_constants(&c, &NormSequence::euclidean(), &split, &quick()).unwrap();
        assert_relative_eq!(fit.lambda, 1.0, epsilon = 1e-9);
        assert_relative_eq!(fit.d, 1.0, epsilon = 1e-9);
        assert!(fit.epsilon < 1e-9);
    }

    #[test]
    fn identity_fit_has_no_decay() {
        let c = cocycle("identity", json!({}), 2, 32);
        let split = Splitting::axis(2, 32, 1).unwrap();
        assert!(matches!(
            fit_constants(&c, &NormSequence::euclidean(), &split, &quick()),
            Err(Error::NoPolynomialDecay { .. })
        ));
    }

    #[test]
    fn growth_examples() {
        let diag = cocycle("diagonal-poly", json!({"lambda": 1.0}), 2, 128);
        let g = fit_growth_bound(&diag, &NormSequence::euclidean(), &quick()).unwrap();
        assert_relative_eq!(g.a, 1.0, epsilon = 1e-6);
        assert_relative_eq!(g.m, 1.0, epsilon = 1e-6);
        assert!(g.bounded);
        let id = cocycle("identity", json!({}), 2, 64);
        let g = fit_growth_bound(&id, &NormSequence::euclidean(), &quick()).unwrap();
        assert!(g.a.abs() < 1e-9 && (g.m - 1.0).abs() < 1e-9 && g.bounded);
        let ce = cocycle("power2-counterexample", json!({}), 1, 256);
        let g = fit_growth_bound(&ce, &NormSequence::euclidean(), &quick()).unwrap();
        assert!(!g.bounded);
        assert_eq!(g.witness, 128);
    }

    #[test]
    fn gamma_examples() {
        let e1 = Matrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let e2 = Matrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let ns = NormSequence::euclidean();
        let pair = |s: &Matrix, u: &Matrix| SubspacePair {
            n: 1,
            stable_basis: s.clone(),
            unstable_basis: u.clone(),
            scores: vec![],
        };
        assert_relative_eq!(gamma(&pair(&e1, &e2), &ns, 64).unwrap().0, 2f64.sqrt(), epsilon = 1e-14);
        let th = std::f64::consts::FRAC_PI_3;
        let tilted = Matrix::from_column_slice(2, 1, &[th.cos(), th.sin()]);
        assert_relative_eq!(gamma(&pair(&e1, &tilted), &ns, 64).unwrap().0, 1.0, epsilon = 1e-12);
        assert_eq!(gamma(&pair(&e1, &Matrix::zeros(2, 0)), &ns, 64).unwrap().0, 2.0);
        // sup norm goes through the search path
        let sup = NormSequence::base(BaseNorm::Sup);
        let (g, _) = gamma(&pair(&e1, &e2), &sup, 64).unwrap();
        assert_relative_eq!(g, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn lyapunov_slopes() {
        let c = cocycle("diagonal-poly", json!({"lambda": 1.0}), 2, 256);
        let w = default_window(256);
        let r = lyapunov_report(&c, &Matrix::identity(2, 2), w, 0.1).unwrap();
        assert_relative_eq!(r.estimates[0].slope, -1.0, epsilon = 1e-9);
        assert_relative_eq!(r.estimates[1].slope, 1.0, epsilon = 1e-9);
        assert_eq!(r.signs, vec![-1, 1]);
        let id = cocycle("identity", json!({}), 2, 64);
        let e = polynomial_lyapunov_exponent(&id, &Vector::from_column_slice(&[1.0, 1.0]), (2, 64)).unwrap();
        assert_relative_eq!(e.slope, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn certify_diagonal_model() {
        let c = cocycle("diagonal-poly", json!({"lambda": 1.0}), 2, 128);
        let cert = certify(c, &NormSequence::euclidean(), &DichotomyOptions::default()).unwrap();
        assert!(cert.flags.dichotomy && cert.flags.strong);
        assert!(!cert.flags.contraction && !cert.flags.expansion);
        assert_relative_eq!(cert.constants.lambda, 1.0, epsilon = 1e-6);
        assert_eq!(cert.stable_dim, 1);
        assert!(cert.admissibility.as_ref().unwrap().invertible);
        let j = cert.to_json();
        for key in ["flags", "constants", "projections", "gamma", "residuals", "N0", "grid"] {
            assert!(j.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn certify_scalar_contraction() {
        let c = cocycle("diagonal-poly", json!({"exponents": [-1.0]}), 1, 128);
        let cert = certify(c, &NormSequence::euclidean(), &DichotomyOptions::default()).unwrap();
        assert!(cert.flags.dichotomy && cert.flags.contraction && cert.flags.strong);
    }

    #[test]
    fn certify_counterexample_is_refused() {
        let c = cocycle("power2-counterexample", json!({}), 1, 256);
        match certify(c, &NormSequence::euclidean(), &quick()) {
            Ok(cert) => assert!(!cert.flags.contraction && !cert.flags.strong),
            Err(e) => assert!(!e.partial.growth.unwrap().bounded),
        }
    }

    #[test]
    fn contraction_and_expansion_checks() {
        let opts = quick();
        let ns = NormSequence::euclidean();
        let contraction = cocycle("diagonal-poly", json!({"exponents": [-1.0]}), 1, 128);
        let expansion = cocycle("diagonal-poly", json!({"exponents": [1.0]}), 1, 128);
        let identity = cocycle("identity", json!({}), 1, 128);
        let ce = cocycle("power2-counterexample", json!({}), 1, 128);
        let ev = check_contraction(&contraction, &ns, &opts).unwrap();
        assert!(ev.holds, "{ev:?}");
        assert!(!check_contraction(&identity, &ns, &opts).unwrap().holds);
        let ev = check_contraction(&ce, &ns, &opts).unwrap();
        assert!(!ev.holds && !ev.bounded);
        assert!(check_expansion(&expansion, &ns, &opts).unwrap().holds);
        assert!(!check_expansion(&contraction, &ns, &opts).unwrap().holds);
        assert!(!check_expansion(&identity, &ns, &opts).unwrap().holds);
    }

    #[test]
    fn proof_route_constants() {
        let p = proof_route(1.0, 1.0, 2.0);
        assert_relative_eq!(p.l, 8.0);
        assert_relative_eq!(p.log_n0, 1.0 + E * 16.0);
        assert_relative_eq!(p.d, 8.0 * E);
        let (n0, c) = gamma_lower_bound(1.0, 1.0, 1.0, 1.0);
        assert_eq!(n0, 2.0);
        assert_relative_eq!(c, (2.0 - 0.5) / 2.0);
    }
}
