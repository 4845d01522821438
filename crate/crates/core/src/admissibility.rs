//! Sequence spaces, the operator `T_Z`, its Green-kernel inverse and finite
//! truncations.
//!
//! A sequence `x = (x_1, ..., x_N)` is stored 0-based (`entries[m - 1] = x_m`).
//! `T_Z` maps `x` with `x_1 in Z` to `y` with `y_1 = 0` and
//! `y_{m+1} = (m+1)(x_{m+1} - A_m x_m)`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::norms::NormSequence;
use crate::splitting::Splitting;
use crate::system::Cocycle;

/// Relative tolerance of residual checks.
pub const RESIDUAL_TOL: f64 = 1e-8;
/// Rank decisions: `sigma_min / sigma_max` above this counts as invertible.
pub const RANK_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpaceTag {
    Y,
    #[serde(rename = "YZ")]
    YZ,
    #[serde(rename = "Y0")]
    Y0,
}

impl SpaceTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SpaceTag::Y => "Y",
            SpaceTag::YZ => "YZ",
            SpaceTag::Y0 => "Y0",
        }
    }
}

/// Finite sequence `x_1, ..., x_N` tagged with the space it belongs to.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundedSequence {
    entries: Vec<Vector>,
    tag: SpaceTag,
}

impl BoundedSequence {
    /// Validates dimensions and, for `Y0`, that `x_1 = 0`.
    pub fn new(entries: Vec<Vector>, tag: SpaceTag) -> Result<Self> {
        let Some(first) = entries.first() else {
            return Err(Error::InvalidSequence("sequence has no entries".into()));
        };
        let d = first.len();
        if let Some(bad) = entries.iter().position(|v| v.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: entries[bad].len(),
                context: "sequence entry length",
            });
        }
        if entries.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::InvalidSequence("non-finite entry".into()));
        }
        if tag == SpaceTag::Y0 {
            let scale = entries.iter().map(|v| v.norm()).fold(1.0, f64::max);
            let r = first.norm();
            if r > 1e-10 * scale {
                return Err(Error::NotInSpace {
                    space: "Y0",
                    residual: r,
                });
            }
        }
        Ok(BoundedSequence { entries, tag })
    }

    pub fn zeros(d: usize, horizon: usize, tag: SpaceTag) -> Self {
        BoundedSequence {
            entries: vec![Vector::zeros(d); horizon],
            tag,
        }
    }

    pub fn tag(&self) -> SpaceTag {
        self.tag
    }

    pub fn entries(&self) -> &[Vector] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<Vector> {
        self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.entries[0].len()
    }

    /// `x_m`, 1-based.
    pub fn get(&self, m: usize) -> Result<&Vector> {
        if m == 0 || m > self.len() {
            return Err(Error::range("m", m, 1, self.len()));
        }
        Ok(&self.entries[m - 1])
    }

    /// `||x||_inf = max_m ||x_m||_m`.
    pub fn sup_norm(&self, norms: &NormSequence) -> Result<f64> {
        let mut best: f64 = 0.0;
        for (i, v) in self.entries.iter().enumerate() {
            if v.iter().all(|x| *x == 0.0) {
                continue;
            }
            best = best.max(norms.eval(i + 1, v)?);
        }
        Ok(best)
    }

    fn combine(&self, other: &Self, f: impl Fn(&Vector, &Vector) -> Vector) -> Self {
        BoundedSequence {
            entries: self.entries.iter().zip(&other.entries).map(|(a, b)| f(a, b)).collect(),
            tag: self.tag,
        }
    }

    /// Entrywise `self - other`, keeping `self`'s tag.
    pub fn sub(&self, other: &Self) -> Self {
        self.combine(other, |a, b| a - b)
    }

    /// `alpha * self + beta * other`, keeping `self`'s tag.
    pub fn lin_comb(&self, alpha: f64, other: &Self, beta: f64) -> Self {
        self.combine(other, |a, b| a * alpha + b * beta)
    }
}

/// The admissibility operator `T_Z` on a finite horizon.
#[derive(Clone, Debug)]
pub struct TZOperator {
    cocycle: Arc<Cocycle>,
    z: Matrix,
    norms: NormSequence,
}

impl TZOperator {
    /// `z` holds column vectors spanning `Z`; it is orthonormalised here.
    pub fn new(cocycle: Arc<Cocycle>, z: &Matrix, norms: NormSequence) -> Result<Self> {
        let d = cocycle.dimension();
        if z.nrows() != d {
            return Err(Error::ZDimensionIncompatible(format!(
                "Z-basis has {} rows for dimension {d}",
                z.nrows()
            )));
        }
        if z.ncols() > d {
            return Err(Error::ZDimensionIncompatible(format!(
                "{} Z-basis columns exceed dimension {d}",
                z.ncols()
            )));
        }
        let (basis, _) = linalg::orthonormal_basis(z, 1e-10);
        if basis.ncols() != z.ncols() {
            return Err(Error::Config(format!(
                "Z-basis is rank-deficient (rank {} of {})",
                basis.ncols(),
                z.ncols()
            )));
        }
        if cocycle.horizon() < 2 {
            return Err(Error::Config("T_Z needs horizon N >= 2".into()));
        }
        Ok(TZOperator {
            cocycle,
            z: basis,
            norms,
        })
    }

    pub fn cocycle(&self) -> &Arc<Cocycle> {
        &self.cocycle
    }

    pub fn z_basis(&self) -> &Matrix {
        &self.z
    }

    pub fn z_dim(&self) -> usize {
        self.z.ncols()
    }

    pub fn norms(&self) -> &NormSequence {
        &self.norms
    }

    pub fn dimension(&self) -> usize {
        self.cocycle.dimension()
    }

    pub fn horizon(&self) -> usize {
        self.cocycle.horizon()
    }

    /// Relative distance of `v` from `Z`.
    pub fn z_residual(&self, v: &Vector) -> f64 {
        let nv = v.norm();
        if nv == 0.0 {
            return 0.0;
        }
        (v - &self.z * (self.z.transpose() * v)).norm() / nv
    }

    fn check_domain(&self, x: &BoundedSequence) -> Result<()> {
        if x.tag() == SpaceTag::Y {
            return Err(Error::DomainTag {
                expected: "YZ",
                got: x.tag().as_str(),
            });
        }
        if x.len() != self.horizon() || x.dimension() != self.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.horizon(),
                got: x.len(),
                context: "sequence length versus horizon",
            });
        }
        let r = self.z_residual(&x.entries[0]);
        if r > 1e-10 {
            return Err(Error::NotInSpace {
                space: "Y_Z",
                residual: r,
            });
        }
        Ok(())
    }

    /// `T_Z x`.
    pub fn apply(&self, x: &BoundedSequence) -> Result<BoundedSequence> {
        self.check_domain(x)?;
        let seq = self.cocycle.sequence();
        let mut out = Vec::with_capacity(x.len());
        out.push(Vector::zeros(self.dimension()));
        for m in 1..x.len() {
            let v = (&x.entries[m] - seq.a(m) * &x.entries[m - 1]) * (m as f64 + 1.0);
            out.push(v);
        }
        Ok(BoundedSequence {
            entries: out,
            tag: SpaceTag::Y0,
        })
    }

    /// `||x||_inf + ||T_Z x||_inf`.
    pub fn graph_norm(&self, x: &BoundedSequence) -> Result<f64> {
        let tx = self.apply(x)?;
        Ok(x.sup_norm(&self.norms)? + tx.sup_norm(&self.norms)?)
    }

    fn check_rhs(&self, y: &BoundedSequence) -> Result<()> {
        if y.tag() != SpaceTag::Y0 {
            return Err(Error::DomainTag {
                expected: "Y0",
                got: y.tag().as_str(),
            });
        }
        if y.len() != self.horizon() || y.dimension() != self.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.horizon(),
                got: y.len(),
                context: "right-hand side length versus horizon",
            });
        }
        Ok(())
    }

    /// Max relative defect of `x_{n+1} - A_n x_n = y_{n+1}/(n+1)`.
    pub fn defect(&self, x: &BoundedSequence, y: &BoundedSequence) -> f64 {
        let seq = self.cocycle.sequence();
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for n in 1..x.len() {
            let ax = seq.a(n) * &x.entries[n - 1];
            let rhs = &y.entries[n] / (n as f64 + 1.0);
            let r = (&x.entries[n] - &ax - &rhs).norm();
            worst = worst.max(r);
            scale = scale.max(x.entries[n].norm() + ax.norm() + rhs.norm());
        }
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }
}

/// Output of [`green_solve`].
#[derive(Clone, Debug)]
pub struct GreenSolution {
    pub x: BoundedSequence,
    /// Relative defect of the difference equation.
    pub defect: f64,
    /// The unstable series is cut at the horizon.
    pub truncated: bool,
}

/// Green-kernel solution
/// `x_n = sum_{k<=n} (1/k) A(n,k) P_k y_k - sum_{n<k<=N} (1/k) A(n,k) Q_k y_k`.
///
/// Both sums are evaluated by recursions: the stable part forward in `n`,
/// the unstable part backward through the one-step inverses on `Z(k)`.
pub fn green_solve(t: &TZOperator, split: &Splitting, y: &BoundedSequence) -> Result<GreenSolution> {
    t.check_rhs(y)?;
    let seq = t.cocycle().sequence();
    let horizon = t.horizon();
    if split.horizon() < horizon || split.dimension() != t.dimension() {
        return Err(Error::Certificate("splitting does not cover the operator's horizon".into()));
    }
    let (eq, at) = split.equivariance_residual(seq);
    if eq > RESIDUAL_TOL {
        return Err(Error::Certificate(format!(
            "projections are not equivariant: residual {eq:.3e} at m = {at}"
        )));
    }
    let u1 = split.unstable_basis(1)?;
    if u1.ncols() != t.z_dim() || linalg::subspace_distance(t.z_basis(), u1) > 1e-6 {
        return Err(Error::Certificate("Z must coincide with Im Q_1 for the Green solution".into()));
    }
    let d = t.dimension();
    let steps = split.unstable_step_inverses(seq)?;

    let mut stable = vec![Vector::zeros(d); horizon];
    stable[0] = split.p(1)? * &y.entries[0];
    for n in 1..horizon {
        let inject = split.p(n + 1)? * &y.entries[n] / (n as f64 + 1.0);
        stable[n] = seq.a(n) * &stable[n - 1] + inject;
    }
    let mut unstable = vec![Vector::zeros(d); horizon];
    for n in (1..horizon).rev() {
        let inject = split.q(n + 1)? * &y.entries[n] / (n as f64 + 1.0);
        unstable[n - 1] = &steps[n - 1] * (inject + &unstable[n]);
    }
    let entries: Vec<Vector> = stable.iter().zip(&unstable).map(|(s, u)| s - u).collect();
    let x = BoundedSequence {
        entries,
        tag: SpaceTag::YZ,
    };
    let defect = t.defect(&x, y);
    if defect > RESIDUAL_TOL {
        return Err(Error::Residual {
            what: "Green solution defect",
            value: defect,
            tol: RESIDUAL_TOL,
        });
    }
    Ok(GreenSolution {
        x,
        defect,
        truncated: true,
    })
}

/// `x_n = sum_{k<=n} (1/k) A(n,k) y_k`, the candidate bounded solution for `Z = {0}`.
pub fn green_solve_contraction(t: &TZOperator, y: &BoundedSequence) -> Result<BoundedSequence> {
    t.check_rhs(y)?;
    let seq = t.cocycle().sequence();
    let mut entries = Vec::with_capacity(y.len());
    entries.push(y.entries[0].clone());
    for n in 1..y.len() {
        let next = seq.a(n) * &entries[n - 1] + &y.entries[n] / (n as f64 + 1.0);
        entries.push(next);
    }
    Ok(BoundedSequence {
        entries,
        tag: SpaceTag::Y0,
    })
}

/// Dense realisation of `T_Z` restricted to `x_1 in Z`.
///
/// Unknowns are ordered `[c (Z-coordinates of x_1), x_2, ..., x_N]`; block row
/// `m` (rows `(m-1)d .. md`) encodes `(m+1)(x_{m+1} - A_m x_m)`.
#[derive(Clone, Debug)]
pub struct Truncation {
    pub matrix: Matrix,
    pub z_dim: usize,
    pub dimension: usize,
    pub horizon: usize,
}

impl Truncation {
    /// Column offset of `x_m` for `m >= 2`.
    pub fn unknown_offset(&self, m: usize) -> usize {
        self.z_dim + (m - 2) * self.dimension
    }

    /// Row offset of the block encoding `y_{m+1}`.
    pub fn row_offset(&self, m: usize) -> usize {
        (m - 1) * self.dimension
    }

    pub fn unknowns(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }
}

pub fn assemble_truncation(t: &TZOperator) -> Result<Truncation> {
    let d = t.dimension();
    let horizon = t.horizon();
    let z = t.z_dim();
    let seq = t.cocycle().sequence();
    let mut mat = Matrix::zeros((horizon - 1) * d, z + (horizon - 1) * d);
    let tr = Truncation {
        matrix: Matrix::zeros(0, 0),
        z_dim: z,
        dimension: d,
        horizon,
    };
    for m in 1..horizon {
        let w = m as f64 + 1.0;
        let r = tr.row_offset(m);
        mat.view_mut((r, tr.unknown_offset(m + 1)), (d, d))
            .copy_from(&(Matrix::identity(d, d) * w));
        if m == 1 {
            if z > 0 {
                mat.view_mut((r, 0), (d, z)).copy_from(&(seq.a(1) * t.z_basis() * -w));
            }
        } else {
            mat.view_mut((r, tr.unknown_offset(m)), (d, d))
                .copy_from(&(seq.a(m) * -w));
        }
    }
    Ok(Truncation { matrix: mat, ..tr })
}

/// The `z` terminal rows `W^T Q_N` squaring the truncation, `W` an orthonormal
/// basis of `A(N,1) Z`. Returns the rows and the rank of `A(N,1) Z`.
pub fn terminal_rows(t: &TZOperator, split: Option<&Splitting>) -> Result<(Matrix, usize)> {
    let d = t.dimension();
    let horizon = t.horizon();
    if t.z_dim() == 0 {
        return Ok((Matrix::zeros(0, d), 0));
    }
    let image = t.cocycle().eval(horizon, 1)? * t.z_basis();
    let (w, _) = linalg::orthonormal_basis(&image, 1e-12);
    let rank = w.ncols();
    let q = match split {
        Some(s) => s.q(horizon)?,
        None => Matrix::identity(d, d),
    };
    let mut rows = Matrix::zeros(t.z_dim(), d);
    rows.view_mut((0, 0), (rank, d)).copy_from(&(w.transpose() * q));
    Ok((rows, rank))
}

/// Structured solver of the squared truncation
/// `T_Z x = y`, `L x_N = 0` with `L` from [`terminal_rows`].
pub struct TruncatedSolver<'a> {
    t: &'a TZOperator,
    /// `A(j,1) Z` for `j = 1..N`.
    homogeneous: Vec<Matrix>,
    /// `K^{-1} L` (`z x d`), absent when `K` is singular.
    kinv_l: Option<Matrix>,
    terminal: Matrix,
    k_rcond: f64,
}

impl<'a> TruncatedSolver<'a> {
    pub fn new(t: &'a TZOperator, split: Option<&Splitting>) -> Result<Self> {
        let (terminal, rank) = terminal_rows(t, split)?;
        let z = t.z_dim();
        let mut homogeneous = Vec::with_capacity(t.horizon());
        let mut acc = t.z_basis().clone();
        homogeneous.push(acc.clone());
        for j in 1..t.horizon() {
            acc = t.cocycle().sequence().a(j) * acc;
            homogeneous.push(acc.clone());
        }
        let (kinv_l, k_rcond) = if z == 0 {
            (Some(Matrix::zeros(0, t.dimension())), 1.0)
        } else {
            let last = homogeneous.last().expect("horizon >= 2");
            let k = &terminal * last;
            let scale = linalg::spectral_norm(&terminal) * linalg::spectral_norm(last);
            let sv = linalg::singular_values(&k);
            let smin = sv.last().copied().unwrap_or(0.0);
            let rc = if scale > 0.0 { smin / scale } else { 0.0 };
            if rank < z || rc <= 1e-14 {
                (None, rc)
            } else {
                let inv = k.try_inverse().ok_or_else(|| Error::Singular("terminal block".into()))?;
                (Some(inv * &terminal), rc)
            }
        };
        Ok(TruncatedSolver {
            t,
            homogeneous,
            kinv_l,
            terminal,
            k_rcond,
        })
    }

    pub fn is_solvable(&self) -> bool {
        self.kinv_l.is_some()
    }

    /// Solves for `x` given `y` (with `y_1 = 0`).
    pub fn solve(&self, y: &BoundedSequence) -> Result<BoundedSequence> {
        self.t.check_rhs(y)?;
        let kinv_l = self
            .kinv_l
            .as_ref()
            .ok_or_else(|| Error::Singular("truncated T_Z is not invertible".into()))?;
        let seq = self.t.cocycle().sequence();
        let horizon = self.t.horizon();
        let d = self.t.dimension();
        let mut p = vec![Vector::zeros(d); horizon];
        for n in 1..horizon {
            p[n] = seq.a(n) * &p[n - 1] + &y.entries[n] / (n as f64 + 1.0);
        }
        let c = -(kinv_l * &p[horizon - 1]);
        let entries = p
            .into_iter()
            .zip(&self.homogeneous)
            .map(|(pj, hj)| pj + hj * &c)
            .collect();
        Ok(BoundedSequence {
            entries,
            tag: SpaceTag::YZ,
        })
    }
}

/// Invertibility of the squared truncation and estimates of `||T_Z^{-1}||`.
#[derive(Clone, Debug, PartialEq)]
pub struct InvertibilityReport {
    pub invertible: bool,
    /// Upper estimate of `||T_Z^{-1}||` from `Y_0` to the graph norm.
    pub inv_norm_upper: f64,
    /// Largest `||x||_inf / ||y||_inf` over the localized test sequences.
    pub inv_norm_lower: f64,
    /// Upper bound on the 2-norm condition number of the squared truncation.
    pub conditioning: f64,
    pub truncated: bool,
    /// Largest `||x||_inf / ||y||_inf` over random probes.
    pub probe_estimate: f64,
    /// Block-row-sum bound `max_m sum_k ||G_mk||` (exact norms only).
    pub block_bound: Option<f64>,
    pub terminal_rcond: f64,
}

impl InvertibilityReport {
    /// JSON with exactly the public report fields; infinities become `null`.
    pub fn to_json(&self) -> Value {
        let f = |v: f64| if v.is_finite() { json!(v) } else { Value::Null };
        json!({
            "invertible": self.invertible,
            "inv_norm_upper": f(self.inv_norm_upper),
            "inv_norm_lower": f(self.inv_norm_lower),
            "conditioning": f(self.conditioning),
            "truncated": self.truncated,
        })
    }
}

#[derive(Clone, Debug)]
pub struct ReportOptions {
    pub probes: usize,
    pub seed: u64,
    /// Times `n` used for stable test sequences.
    pub test_points: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            probes: 256,
            seed: 0,
            test_points: 12,
        }
    }
}

/// Decides invertibility of the squared truncation and brackets `||T_Z^{-1}||`.
///
/// With exact norm families the upper bound `1 + max_m sum_k ||G_mk||_{k->m}`
/// is rigorous for the truncation (`G` the block inverse); with adapted norms
/// it falls back to the probe estimate.
pub fn invertibility_report(
    t: &TZOperator,
    split: Option<&Splitting>,
    opts: &ReportOptions,
) -> Result<InvertibilityReport> {
    let solver = TruncatedSolver::new(t, split)?;
    let lower = test_sequence_lower_bound(t, split, opts.test_points);
    if !solver.is_solvable() {
        return Ok(InvertibilityReport {
            invertible: false,
            inv_norm_upper: f64::INFINITY,
            inv_norm_lower: lower,
            conditioning: f64::INFINITY,
            truncated: true,
            probe_estimate: f64::INFINITY,
            block_bound: None,
            terminal_rcond: solver.k_rcond,
        });
    }
    let blocks = inverse_blocks(&solver)?;
    let conditioning = matrix_norm_bound(t, &solver) * blocks.norm2_bound;
    let probe = probe_estimate(t, &solver, opts)?;
    let mut upper = 1.0 + probe.max(lower);
    if let Some(b) = blocks.row_sum {
        upper = upper.max(1.0 + b);
    }
    Ok(InvertibilityReport {
        invertible: conditioning.is_finite() && conditioning < 1.0 / RANK_TOL,
        inv_norm_upper: upper,
        inv_norm_lower: lower,
        conditioning,
        truncated: true,
        probe_estimate: probe,
        block_bound: blocks.row_sum,
        terminal_rcond: solver.k_rcond,
    })
}

struct InverseBlocks {
    row_sum: Option<f64>,
    norm2_bound: f64,
}

/// Column-block sweep over the inverse `G`, accumulating the block-row sums
/// in the configured norms and the entrywise 1- and inf-norms.
fn inverse_blocks(solver: &TruncatedSolver) -> Result<InverseBlocks> {
    let t = solver.t;
    let d = t.dimension();
    let horizon = t.horizon();
    let z = t.z_dim();
    let seq = t.cocycle().sequence();
    let exact = t.norms().is_exact();
    let kinv_l = solver.kinv_l.as_ref().expect("checked solvable");
    let unknowns = z + (horizon - 1) * d;

    struct Partial {
        block_rows: Vec<f64>,
        abs_rows: Vec<f64>,
        col_max: f64,
    }
    let sweep = |k: usize| -> Result<Partial> {
        // columns of G for y_k: x_j = [j >= k] A(j,k)/k - A(j,1) Z K^{-1} L A(N,k)/k
        let kf = k as f64;
        let mut orbit = Vec::with_capacity(horizon - k + 1);
        let mut acc = Matrix::identity(d, d) / kf;
        orbit.push(acc.clone());
        for j in k..horizon {
            acc = seq.a(j) * acc;
            orbit.push(acc.clone());
        }
        let corr = kinv_l * orbit.last().expect("nonempty");
        let mut block_rows = vec![0.0; horizon];
        let mut abs_rows = vec![0.0; unknowns];
        let mut col_abs = vec![0.0; d];
        for j in 1..=horizon {
            let hom = &solver.homogeneous[j - 1] * &corr;
            let g = if j >= k { &orbit[j - k] - hom } else { -hom };
            if exact {
                block_rows[j - 1] = t.norms().op_norm(j, k, &g)?;
            }
            if j == 1 {
                let cblock = -&corr;
                for r in 0..z {
                    for c in 0..d {
                        abs_rows[r] += cblock[(r, c)].abs();
                        col_abs[c] += cblock[(r, c)].abs();
                    }
                }
            } else {
                let off = z + (j - 2) * d;
                for r in 0..d {
                    for c in 0..d {
                        abs_rows[off + r] += g[(r, c)].abs();
                        col_abs[c] += g[(r, c)].abs();
                    }
                }
            }
        }
        Ok(Partial {
            block_rows,
            abs_rows,
            col_max: col_abs.into_iter().fold(0.0, f64::max),
        })
    };
    let parts: Vec<Partial> = (2..=horizon).into_par_iter().map(sweep).collect::<Result<_>>()?;
    let mut block_rows = vec![0.0; horizon];
    let mut abs_rows = vec![0.0; unknowns];
    let mut col_max: f64 = 0.0;
    for p in parts {
        for (a, b) in block_rows.iter_mut().zip(&p.block_rows) {
            *a += b;
        }
        for (a, b) in abs_rows.iter_mut().zip(&p.abs_rows) {
            *a += b;
        }
        col_max = col_max.max(p.col_max);
    }
    // terminal columns: c = K^{-1} e_i, x_j = A(j,1) Z c
    if z > 0 {
        let last = solver.homogeneous.last().expect("horizon >= 2");
        let k = &solver.terminal * last;
        if let Some(kinv) = k.try_inverse() {
            for i in 0..z {
                let c = kinv.column(i).into_owned();
                let mut col = c.iter().map(|v| v.abs()).sum::<f64>();
                for r in 0..z {
                    abs_rows[r] += c[r].abs();
                }
                for j in 2..=horizon {
                    let x = &solver.homogeneous[j - 1] * &c;
                    let off = z + (j - 2) * d;
                    for r in 0..d {
                        abs_rows[off + r] += x[r].abs();
                        col += x[r].abs();
                    }
                }
                col_max = col_max.max(col);
            }
        }
    }
    let row_max = abs_rows.into_iter().fold(0.0, f64::max);
    Ok(InverseBlocks {
        row_sum: exact.then(|| block_rows.into_iter().fold(0.0, f64::max)),
        norm2_bound: (row_max * col_max).sqrt(),
    })
}

/// `sqrt(||T||_1 ||T||_inf)` for the squared truncation.
fn matrix_norm_bound(t: &TZOperator, solver: &TruncatedSolver) -> f64 {
    let d = t.dimension();
    let horizon = t.horizon();
    let z = t.z_dim();
    let seq = t.cocycle().sequence();
    let abs_row = |m: &Matrix, r: usize| m.row(r).iter().map(|v| v.abs()).sum::<f64>();
    let abs_col = |m: &Matrix, c: usize| m.column(c).iter().map(|v| v.abs()).sum::<f64>();
    let mut row_max: f64 = 0.0;
    let mut col_max: f64 = 0.0;
    let a1z = seq.a(1) * t.z_basis();
    for m in 1..horizon {
        let w = m as f64 + 1.0;
        let left = if m == 1 { a1z.clone() } else { seq.a(m).clone() };
        for r in 0..d {
            row_max = row_max.max(w * (1.0 + abs_row(&left, r)));
        }
    }
    for r in 0..solver.terminal.nrows() {
        row_max = row_max.max(abs_row(&solver.terminal, r));
    }
    for c in 0..z {
        col_max = col_max.max(2.0 * abs_col(&a1z, c));
    }
    for j in 2..=horizon {
        for c in 0..d {
            let mut s = j as f64;
            if j < horizon {
                s += (j as f64 + 1.0) * abs_col(seq.a(j), c);
            } else {
                s += abs_col(&solver.terminal, c);
            }
            col_max = col_max.max(s);
        }
    }
    (row_max * col_max).sqrt()
}

fn probe_estimate(t: &TZOperator, solver: &TruncatedSolver, opts: &ReportOptions) -> Result<f64> {
    let d = t.dimension();
    let horizon = t.horizon();
    let ratios: Vec<f64> = (0..opts.probes)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_mul(0x9E37_79B9).wrapping_add(i as u64));
            // alternate between full-support probes and probes supported on a window
            let (lo, hi) = if i % 2 == 0 {
                (2, horizon)
            } else {
                let a = rng.random_range(2..=horizon);
                let b = rng.random_range(2..=horizon);
                (a.min(b), a.max(b))
            };
            let fixed = linalg::random_unit(&mut rng, d);
            let mut entries = vec![Vector::zeros(d); horizon];
            for e in &mut entries[lo - 1..hi] {
                *e = if i % 4 < 2 {
                    fixed.clone()
                } else {
                    linalg::random_unit(&mut rng, d)
                };
            }
            let y = BoundedSequence {
                entries,
                tag: SpaceTag::Y0,
            };
            let ny = y.sup_norm(t.norms())?;
            if ny == 0.0 {
                return Ok(0.0);
            }
            let x = solver.solve(&y)?;
            Ok(x.sup_norm(t.norms())? / ny)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ratios.into_iter().fold(0.0, f64::max))
}

/// Max of `||x||_inf / ||y||_inf` over stable and unstable test sequences;
/// zero when none can be built.
fn test_sequence_lower_bound(t: &TZOperator, split: Option<&Splitting>, points: usize) -> f64 {
    let horizon = t.horizon();
    let mut best: f64 = 0.0;
    let mut consider = |ts: Result<TestSequence>| {
        if let Ok(ts) = ts {
            if let (Ok(nx), Ok(ny)) = (ts.x.sup_norm(t.norms()), ts.y.sup_norm(t.norms())) {
                if ny > 0.0 && nx.is_finite() {
                    best = best.max(nx / ny);
                }
            }
        }
    };
    if horizon > 2 {
        for i in 0..t.z_dim() {
            let z = t.z_basis().column(i).into_owned();
            consider(test_sequence_unstable(t, &z, horizon).map(|(ts, _)| ts));
        }
    }
    if let Some(s) = split {
        if s.stable_dim() > 0 && horizon >= 2 {
            for n in linalg::geometric_grid(1, horizon - 1, points) {
                let basis = match s.stable_basis(n) {
                    Ok(b) => b.clone(),
                    Err(_) => continue,
                };
                for i in 0..basis.ncols() {
                    let x = basis.column(i).into_owned();
                    consider(test_sequence_stable(t, n, horizon, &x));
                }
            }
        }
    }
    best
}

/// A pair `T_Z x = y` built from a single orbit, with its lower bound.
#[derive(Clone, Debug)]
pub struct TestSequence {
    pub x: BoundedSequence,
    pub y: BoundedSequence,
    pub lower_bound: f64,
    /// `||T_Z x - y||_inf / ||y||_inf`.
    pub residual: f64,
}

fn finish_test_sequence(t: &TZOperator, x: Vec<Vector>, y: Vec<Vector>, lower_bound: f64) -> Result<TestSequence> {
    let x = BoundedSequence {
        entries: x,
        tag: SpaceTag::YZ,
    };
    let y = BoundedSequence {
        entries: y,
        tag: SpaceTag::Y0,
    };
    let tx = t.apply(&x)?;
    let ny = y.sup_norm(t.norms())?;
    let residual = tx.sub(&y).sup_norm(t.norms())? / ny.max(f64::MIN_POSITIVE);
    Ok(TestSequence {
        x,
        y,
        lower_bound,
        residual,
    })
}

/// Stable test pair: `y_k = A(k,n)x / ||A(k,n)x||_k` for `n < k <= m`.
/// The lower bound is `||A(m,n)x||_m sum_{j=n+1}^m 1/(j ||A(j,n)x||_j)`.
pub fn test_sequence_stable(t: &TZOperator, n: usize, m: usize, x: &Vector) -> Result<TestSequence> {
    let horizon = t.horizon();
    if n == 0 || m <= n || m > horizon {
        return Err(Error::Config(format!("stable test sequence needs 1 <= n < m <= N, got n = {n}, m = {m}")));
    }
    let d = t.dimension();
    let orbit = t.cocycle().orbit_of(n, x)?;
    let mut xs = vec![Vector::zeros(d); horizon];
    let mut ys = vec![Vector::zeros(d); horizon];
    let mut partial = 0.0;
    let mut last_norm = 0.0;
    for k in n + 1..=horizon {
        let v = &orbit[k - n];
        if k <= m {
            let nv = t.norms().eval(k, v)?;
            if nv == 0.0 {
                return Err(Error::OrbitVanishes { index: k });
            }
            partial += 1.0 / (k as f64 * nv);
            ys[k - 1] = v / nv;
            last_norm = nv;
        }
        xs[k - 1] = v * partial;
    }
    finish_test_sequence(t, xs, ys, last_norm * partial)
}

/// Unstable test pair for `z in Z`: `y_k = -A(k,1)z / ||A(k,1)z||_k` for
/// `2 <= k <= n`, `x_k = sum_{j=k+1}^n (1/j) A(k,1)z / ||A(j,1)z||_j`.
/// Returns the pair (its `lower_bound` is the maximum over `k`) and the
/// per-`k` bounds `||A(k,1)z||_k sum_{j>k} 1/(j ||A(j,1)z||_j)`.
pub fn test_sequence_unstable(t: &TZOperator, z: &Vector, n: usize) -> Result<(TestSequence, Vec<f64>)> {
    let horizon = t.horizon();
    if n <= 2 || n > horizon {
        return Err(Error::Config(format!("unstable test sequence needs 2 < n <= N, got {n}")));
    }
    if z.norm() == 0.0 {
        return Err(Error::Config("unstable test sequence needs z != 0".into()));
    }
    let r = t.z_residual(z);
    if r > 1e-10 {
        return Err(Error::NotInSpace {
            space: "Z",
            residual: r,
        });
    }
    let d = t.dimension();
    let orbit = t.cocycle().orbit_of(1, z)?;
    let mut norms = vec![0.0; n];
    for k in 1..=n {
        norms[k - 1] = t.norms().eval(k, &orbit[k - 1])?;
        if norms[k - 1] == 0.0 {
            return Err(Error::OrbitVanishes { index: k });
        }
    }
    // tail[k] = sum_{j=k+1}^n 1/(j ||A(j,1)z||_j)
    let mut tail = vec![0.0; n + 1];
    for j in (1..=n).rev() {
        let term = if j >= 2 { 1.0 / (j as f64 * norms[j - 1]) } else { 0.0 };
        tail[j - 1] = tail[j] + term;
    }
    let mut xs = vec![Vector::zeros(d); horizon];
    let mut ys = vec![Vector::zeros(d); horizon];
    let mut per_k = Vec::with_capacity(n - 1);
    for k in 1..n {
        xs[k - 1] = &orbit[k - 1] * tail[k];
        per_k.push(norms[k - 1] * tail[k]);
    }
    for k in 2..=n {
        ys[k - 1] = -&orbit[k - 1] / norms[k - 1];
    }
    let bound = per_k.iter().copied().fold(0.0, f64::max);
    Ok((finish_test_sequence(t, xs, ys, bound)?, per_k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{make_generator, GeneratorSpec, OperatorSequence};
    use approx::assert_relative_eq;
    use serde_json::json;

    fn scalar(exponent: f64, horizon: usize) -> Arc<Cocycle> {
        let seq = make_generator(
            &GeneratorSpec::new("diagonal-poly", json!({"exponents": [exponent]})),
            1,
            horizon,
        )
        .unwrap();
        Arc::new(Cocycle::new(Arc::new(seq)))
    }

    fn diag(horizon: usize) -> Arc<Cocycle> {
        let seq = make_generator(&GeneratorSpec::new("diagonal-poly", json!({"lambda": 1.0})), 2, horizon).unwrap();
        Arc::new(Cocycle::new(Arc::new(seq)))
    }

    fn ones_y0(d: usize, horizon: usize) -> BoundedSequence {
        let mut e = vec![Vector::from_element(d, 1.0); horizon];
        e[0] = Vector::zeros(d);
        BoundedSequence::new(e, SpaceTag::Y0).unwrap()
    }

    fn tz(c: Arc<Cocycle>, z: Matrix) -> TZOperator {
        TZOperator::new(c, &z, NormSequence::euclidean()).unwrap()
    }

    #[test]
    fn identity_constant_orbit_is_in_kernel() {
        let seq = make_generator(&GeneratorSpec::new("identity", json!({})), 2, 10).unwrap();
        let c = Arc::new(Cocycle::new(Arc::new(seq)));
        let t = tz(c, Matrix::identity(2, 2));
        let v = Vector::from_column_slice(&[0.6, 0.8]);
        let x = BoundedSequence::new(vec![v; 10], SpaceTag::YZ).unwrap();
        let y = t.apply(&x).unwrap();
        assert!(y.entries().iter().all(|e| e.norm() == 0.0));
        assert_relative_eq!(t.graph_norm(&x).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn apply_on_diagonal_model() {
        let t = tz(diag(8), Matrix::zeros(2, 0));
        let mut e = vec![Vector::zeros(2); 8];
        e[1] = Vector::from_column_slice(&[1.0, 0.0]);
        let y = t.apply(&BoundedSequence::new(e, SpaceTag::YZ).unwrap()).unwrap();
        assert_relative_eq!(y.get(2).unwrap()[0], 2.0, epsilon = 1e-15);
        assert_relative_eq!(y.get(3).unwrap()[0], -2.0, epsilon = 1e-14);
        assert_eq!(y.get(3).unwrap()[1], 0.0);
        assert_eq!(y.get(1).unwrap().norm(), 0.0);
    }

    #[test]
    fn domain_errors() {
        let t = tz(diag(4), Matrix::zeros(2, 0));
        let y = BoundedSequence::zeros(2, 4, SpaceTag::Y);
        assert!(matches!(t.apply(&y), Err(Error::DomainTag { .. })));
        let mut e = vec![Vector::zeros(2); 4];
        e[0] = Vector::from_column_slice(&[1.0, 0.0]);
        let x = BoundedSequence::new(e.clone(), SpaceTag::YZ).unwrap();
        assert!(matches!(t.apply(&x), Err(Error::NotInSpace { .. })));
        assert!(matches!(
            BoundedSequence::new(e, SpaceTag::Y0),
            Err(Error::NotInSpace { space: "Y0", .. })
        ));
    }

    #[test]
    fn green_solve_scalar_contraction() {
        let c = scalar(-1.0, 40);
        let t = tz(c, Matrix::zeros(1, 0));
        let split = Splitting::contraction(1, 40).unwrap();
        let sol = green_solve(&t, &split, &ones_y0(1, 40)).unwrap();
        for n in 1..=40 {
            assert_relative_eq!(sol.x.get(n).unwrap()[0], (n as f64 - 1.0) / n as f64, epsilon = 1e-14);
        }
        let plain = green_solve_contraction(&t, &ones_y0(1, 40)).unwrap();
        assert_relative_eq!(plain.get(17).unwrap()[0], 16.0 / 17.0, epsilon = 1e-14);
    }

    #[test]
    fn green_solve_counterexample_value() {
        let seq = make_generator(&GeneratorSpec::new("power2-counterexample", json!({})), 1, 16).unwrap();
        let c = Arc::new(Cocycle::new(Arc::new(seq)));
        let t = tz(c, Matrix::zeros(1, 0));
        let split = Splitting::contraction(1, 16).unwrap();
        let x = green_solve(&t, &split, &ones_y0(1, 16)).unwrap().x;
        assert_relative_eq!(x.get(5).unwrap()[0], 1.2, epsilon = 1e-15);
        assert_relative_eq!(x.get(6).unwrap()[0], 1.0 / 6.0, epsilon = 1e-15);
    }

    #[test]
    fn green_solve_is_inverse_on_diagonal_model() {
        let c = diag(64);
        let z = Matrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let t = tz(c, z);
        let split = Splitting::axis(2, 64, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut e: Vec<Vector> = (0..64).map(|_| linalg::random_unit(&mut rng, 2)).collect();
        e[0] = Vector::zeros(2);
        let y = BoundedSequence::new(e, SpaceTag::Y0).unwrap();
        let x = green_solve(&t, &split, &y).unwrap().x;
        let back = t.apply(&x).unwrap();
        assert!(back.sub(&y).sup_norm(t.norms()).unwrap() <= 1e-10);
        assert!(x.sup_norm(t.norms()).unwrap() <= 3.0);
    }

    #[test]
    fn non_equivariant_projections_are_rejected() {
        let c = diag(16);
        let z = Matrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let t = tz(c, z);
        let bad = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        let split = Splitting::axis(2, 16, 1).unwrap().with_projection(3, bad).unwrap();
        assert!(matches!(
            green_solve(&t, &split, &ones_y0(2, 16)),
            Err(Error::Certificate(_))
        ));
    }

    #[test]
    fn truncation_shapes() {
        let seq = OperatorSequence::from_matrices(1, vec![Matrix::from_element(1, 1, 0.3)]).unwrap();
        let t = tz(Arc::new(Cocycle::new(Arc::new(seq))), Matrix::identity(1, 1));
        let tr = assemble_truncation(&t).unwrap();
        assert_eq!(tr.matrix, Matrix::from_row_slice(1, 2, &[-0.6, 2.0]));
        let t0 = tz(diag(9), Matrix::zeros(2, 0));
        let tr0 = assemble_truncation(&t0).unwrap();
        assert_eq!(tr0.unknowns(), 16);
        assert_eq!(tr0.rows(), 16);
    }

    #[test]
    fn malformed_z_is_rejected() {
        let c = diag(8);
        assert!(matches!(
            TZOperator::new(c.clone(), &Matrix::zeros(3, 1), NormSequence::euclidean()),
            Err(Error::ZDimensionIncompatible(_))
        ));
        assert!(matches!(
            TZOperator::new(c.clone(), &Matrix::identity(2, 3), NormSequence::euclidean()),
            Err(Error::ZDimensionIncompatible(_))
        ));
        let dependent = Matrix::from_column_slice(2, 2, &[1.0, 0.0, 2.0, 0.0]);
        assert!(matches!(
            TZOperator::new(c, &dependent, NormSequence::euclidean()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn scalar_contraction_reports() {
        let c = scalar(-1.0, 64);
        let split = Splitting::contraction(1, 64).unwrap();
        let t0 = tz(c.clone(), Matrix::zeros(1, 0));
        let r0 = invertibility_report(&t0, Some(&split), &ReportOptions::default()).unwrap();
        assert!(r0.invertible);
        assert!(r0.inv_norm_upper.is_finite());
        assert!(r0.inv_norm_lower <= r0.inv_norm_upper);
        let t1 = tz(c, Matrix::identity(1, 1));
        let r1 = invertibility_report(&t1, Some(&split), &ReportOptions::default()).unwrap();
        assert!(!r1.invertible);
        assert_eq!(r1.to_json()["inv_norm_upper"], Value::Null);
    }

    #[test]
    fn diagonal_model_report_brackets() {
        let c = diag(64);
        let split = Splitting::axis(2, 64, 1).unwrap();
        let t = tz(c, Matrix::from_column_slice(2, 1, &[0.0, 1.0]));
        let r = invertibility_report(&t, Some(&split), &ReportOptions::default()).unwrap();
        assert!(r.invertible);
        assert!(r.inv_norm_lower > 0.0);
        assert!(r.inv_norm_lower <= r.inv_norm_upper);
        let keys: Vec<_> = r.to_json().as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["conditioning", "inv_norm_lower", "inv_norm_upper", "invertible", "truncated"]);
    }

    #[test]
    fn stable_test_sequence_value() {
        let t = tz(scalar(-1.0, 16), Matrix::zeros(1, 0));
        let ts = test_sequence_stable(&t, 1, 4, &Vector::from_element(1, 1.0)).unwrap();
        assert_relative_eq!(ts.lower_bound, 0.75, epsilon = 1e-15);
        assert_relative_eq!(ts.y.sup_norm(t.norms()).unwrap(), 1.0, epsilon = 1e-15);
        assert!(ts.residual <= 1e-10);
    }

    #[test]
    fn unstable_test_sequence_value() {
        let horizon = 400;
        let t = tz(scalar(1.0, horizon), Matrix::identity(1, 1));
        let (ts, per_k) = test_sequence_unstable(&t, &Vector::from_element(1, 1.0), horizon).unwrap();
        let expected: f64 = (2..=horizon).map(|j| 1.0 / (j * j) as f64).sum();
        assert_relative_eq!(per_k[0], expected, max_relative = 1e-12);
        assert!((per_k[0] - (std::f64::consts::PI.powi(2) / 6.0 - 1.0)).abs() < 3e-3);
        assert!(ts.x.get(horizon).unwrap().norm() == 0.0);
        assert_relative_eq!(ts.y.sup_norm(t.norms()).unwrap(), 1.0, epsilon = 1e-15);
        assert!(ts.residual <= 1e-10);
    }

    #[test]
    fn vanishing_orbit_is_reported() {
        let seq = make_generator(&GeneratorSpec::new("power2-counterexample", json!({})), 1, 16).unwrap();
        let t = tz(Arc::new(Cocycle::new(Arc::new(seq))), Matrix::zeros(1, 0));
        assert!(matches!(
            test_sequence_stable(&t, 3, 8, &Vector::from_element(1, 1.0)),
            Err(Error::OrbitVanishes { .. })
        ));
    }
}
