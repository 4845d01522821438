//! Time-dependent splittings `R^d = X(n) + Z(n)` and their projections.

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::system::OperatorSequence;

/// Smallest singular value of `[S | U]` accepted as transversal.
pub const TRANSVERSALITY_TOL: f64 = 1e-6;

/// Projection onto span(`stable`) along span(`unstable`), from solving
/// `[S U] c = x` and keeping the `S` part. Both bases must be orthonormal.
pub fn oblique_projection(stable: &Matrix, unstable: &Matrix, n: usize) -> Result<Matrix> {
    let d = stable.nrows();
    let (ds, du) = (stable.ncols(), unstable.ncols());
    if ds + du != d || unstable.nrows() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: ds + du,
            context: "stable plus unstable dimension",
        });
    }
    if ds == 0 {
        return Ok(Matrix::zeros(d, d));
    }
    if du == 0 {
        return Ok(Matrix::identity(d, d));
    }
    let joint = linalg::hstack(stable, unstable);
    let sigma_min = linalg::singular_values(&joint).last().copied().unwrap_or(0.0);
    if sigma_min <= TRANSVERSALITY_TOL {
        return Err(Error::Transversality { n, sigma_min });
    }
    let inv = joint
        .try_inverse()
        .ok_or(Error::Transversality { n, sigma_min })?;
    Ok(stable * inv.rows(0, ds))
}

/// Projections `P_1, ..., P_N` together with orthonormal bases of their
/// images `X(n)` and kernels `Z(n)`.
#[derive(Clone, Debug)]
pub struct Splitting {
    dimension: usize,
    projections: Vec<Matrix>,
    stable: Vec<Matrix>,
    unstable: Vec<Matrix>,
}

impl Splitting {
    /// From per-time orthonormal bases (index `n - 1` holds time `n`).
    pub fn from_bases(stable: Vec<Matrix>, unstable: Vec<Matrix>) -> Result<Self> {
        if stable.is_empty() || stable.len() != unstable.len() {
            return Err(Error::Config("splitting needs one stable and one unstable basis per time".into()));
        }
        let d = stable[0].nrows();
        let projections = stable
            .iter()
            .zip(&unstable)
            .enumerate()
            .map(|(i, (s, u))| oblique_projection(s, u, i + 1))
            .collect::<Result<Vec<_>>>()?;
        Ok(Splitting {
            dimension: d,
            projections,
            stable,
            unstable,
        })
    }

    /// From explicit projections; images and kernels are read off numerically.
    pub fn from_projections(projections: Vec<Matrix>) -> Result<Self> {
        if projections.is_empty() {
            return Err(Error::Config("splitting needs at least one projection".into()));
        }
        let d = projections[0].nrows();
        let mut stable = Vec::with_capacity(projections.len());
        let mut unstable = Vec::with_capacity(projections.len());
        for (i, p) in projections.iter().enumerate() {
            if p.nrows() != d || p.ncols() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: p.nrows().max(p.ncols()),
                    context: "projection shape",
                });
            }
            let q = Matrix::identity(d, d) - p;
            let (s, _) = linalg::orthonormal_basis(p, 1e-8);
            let (u, _) = linalg::orthonormal_basis(&q, 1e-8);
            if s.ncols() + u.ncols() != d {
                return Err(Error::Certificate(format!("P_{} is not a projection", i + 1)));
            }
            stable.push(s);
            unstable.push(u);
        }
        Ok(Splitting {
            dimension: d,
            projections,
            stable,
            unstable,
        })
    }

    /// Constant coordinate splitting: `X = span(e_1..e_ds)`, `Z` the remaining axes.
    pub fn axis(d: usize, horizon: usize, ds: usize) -> Result<Self> {
        if ds > d {
            return Err(Error::Config(format!("stable dimension {ds} exceeds {d}")));
        }
        let eye = Matrix::identity(d, d);
        let s = eye.columns(0, ds).into_owned();
        let u = eye.columns(ds, d - ds).into_owned();
        Self::from_bases(vec![s; horizon], vec![u; horizon])
    }

    /// `P_n = Id` for every `n`.
    pub fn contraction(d: usize, horizon: usize) -> Result<Self> {
        Self::axis(d, horizon, d)
    }

    /// `P_n = 0` for every `n`.
    pub fn expansion(d: usize, horizon: usize) -> Result<Self> {
        Self::axis(d, horizon, 0)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn horizon(&self) -> usize {
        self.projections.len()
    }

    pub fn stable_dim(&self) -> usize {
        self.stable[0].ncols()
    }

    pub fn unstable_dim(&self) -> usize {
        self.unstable[0].ncols()
    }

    fn idx(&self, n: usize) -> Result<usize> {
        if n == 0 || n > self.horizon() {
            return Err(Error::range("n", n, 1, self.horizon()));
        }
        Ok(n - 1)
    }

    pub fn p(&self, n: usize) -> Result<&Matrix> {
        Ok(&self.projections[self.idx(n)?])
    }

    pub fn q(&self, n: usize) -> Result<Matrix> {
        Ok(Matrix::identity(self.dimension, self.dimension) - self.p(n)?)
    }

    pub fn stable_basis(&self, n: usize) -> Result<&Matrix> {
        Ok(&self.stable[self.idx(n)?])
    }

    pub fn unstable_basis(&self, n: usize) -> Result<&Matrix> {
        Ok(&self.unstable[self.idx(n)?])
    }

    pub fn projections(&self) -> &[Matrix] {
        &self.projections
    }

    /// Replaces `P_n`; used to inject faults in diagnostics and tests.
    pub fn with_projection(mut self, n: usize, p: Matrix) -> Result<Self> {
        let i = self.idx(n)?;
        self.projections[i] = p;
        Ok(self)
    }

    /// Same splitting restricted to times `1..=horizon`.
    pub fn truncate(&self, horizon: usize) -> Result<Self> {
        self.idx(horizon)?;
        Ok(Splitting {
            dimension: self.dimension,
            projections: self.projections[..horizon].to_vec(),
            stable: self.stable[..horizon].to_vec(),
            unstable: self.unstable[..horizon].to_vec(),
        })
    }

    /// `max_n ||P_n^2 - P_n||`.
    pub fn idempotency_residual(&self) -> f64 {
        self.projections
            .iter()
            .map(|p| linalg::spectral_norm(&(p * p - p)))
            .fold(0.0, f64::max)
    }

    /// `max_m ||A_m P_m - P_{m+1} A_m|| / max(1, ||A_m||)` and the worst `m`.
    pub fn equivariance_residual(&self, seq: &OperatorSequence) -> (f64, usize) {
        let top = seq.horizon().min(self.horizon());
        let mut worst = (0.0, 1);
        for m in 1..top {
            let a = seq.a(m);
            let r = linalg::spectral_norm(&(a * &self.projections[m - 1] - &self.projections[m] * a))
                / linalg::spectral_norm(a).max(1.0);
            if r > worst.0 {
                worst = (r, m);
            }
        }
        worst
    }

    /// `max_n ||P_n||` (spectral norm).
    pub fn max_projection_norm(&self) -> f64 {
        self.projections
            .iter()
            .map(linalg::spectral_norm)
            .fold(0.0, f64::max)
    }

    /// One-step inverses on the unstable bundle: entry `k - 1` is the `d x d`
    /// matrix of `(A_k|Z(k))^{-1}: Z(k+1) -> Z(k)`, zero on `Z(k+1)^perp`.
    pub fn unstable_step_inverses(&self, seq: &OperatorSequence) -> Result<Vec<Matrix>> {
        let top = seq.horizon().min(self.horizon());
        let d = self.dimension;
        let du = self.unstable_dim();
        (1..top)
            .map(|k| {
                if du == 0 {
                    return Ok(Matrix::zeros(d, d));
                }
                let uk = &self.unstable[k - 1];
                let uk1 = &self.unstable[k];
                let step = uk1.transpose() * seq.a(k) * uk;
                let rc = linalg::rcond(&step);
                if rc < 1e-12 {
                    return Err(Error::UnstableRestrictionSingular { m: k, n: k + 1, rcond: rc });
                }
                let inv = step
                    .try_inverse()
                    .ok_or(Error::UnstableRestrictionSingular { m: k, n: k + 1, rcond: rc })?;
                Ok(uk * inv * uk1.transpose())
            })
            .collect()
    }
}

/// Backward unstable chain `[A(1, n) Q_n, ..., A(n, n) Q_n]` built from the
/// one-step inverses of [`Splitting::unstable_step_inverses`].
pub fn backward_chain(step_inverses: &[Matrix], q_n: &Matrix, n: usize) -> Vec<Matrix> {
    let mut out = vec![Matrix::zeros(q_n.nrows(), q_n.ncols()); n];
    let mut acc = q_n.clone();
    out[n - 1] = acc.clone();
    for k in (1..n).rev() {
        acc = &step_inverses[k - 1] * acc;
        out[k - 1] = acc.clone();
    }
    out
}
