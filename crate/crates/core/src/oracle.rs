//! Brute-force reference computations for small instances.
//!
//! Nothing here reuses the main code paths: cocycles are naive left
//! products, the admissibility system is assembled and solved densely, and
//! `gamma` is a plain grid search. Inputs are limited to `d <= 3`, `N <= 64`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::system::OperatorSequence;

pub const MAX_DIMENSION: usize = 3;
pub const MAX_HORIZON: usize = 64;

fn check_limits(d: usize, horizon: usize) -> Result<()> {
    if d > MAX_DIMENSION || horizon > MAX_HORIZON {
        return Err(Error::OracleLimit(format!(
            "d = {d}, N = {horizon}; the oracle accepts d <= {MAX_DIMENSION}, N <= {MAX_HORIZON}"
        )));
    }
    Ok(())
}

/// `A_{m-1} ... A_n` by direct multiplication.
pub fn dense_cocycle(seq: &OperatorSequence, m: usize, n: usize) -> Result<DMatrix<f64>> {
    let d = seq.dimension();
    check_limits(d, seq.horizon())?;
    if n == 0 || m < n || m > seq.horizon() {
        return Err(Error::OracleLimit(format!("need 1 <= n <= m <= N, got m = {m}, n = {n}")));
    }
    let mut acc = DMatrix::identity(d, d);
    for k in n..m {
        acc = seq.get(k)? * acc;
    }
    Ok(acc)
}

/// Orthonormal basis of the column span by modified Gram-Schmidt.
fn gram_schmidt(cols: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let scale = cols.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    let mut kept: Vec<DVector<f64>> = Vec::new();
    for c in cols.column_iter() {
        let mut v = c.into_owned();
        for _ in 0..2 {
            for q in &kept {
                v -= q * q.dot(&v);
            }
        }
        let n = v.norm();
        if n > tol * scale.max(1e-300) {
            kept.push(v / n);
        }
    }
    if kept.is_empty() {
        DMatrix::zeros(cols.nrows(), 0)
    } else {
        DMatrix::from_columns(&kept)
    }
}

/// Completes an orthonormal set to a basis and returns the added vectors.
fn complement(q: &DMatrix<f64>) -> DMatrix<f64> {
    let d = q.nrows();
    let mut all = q.clone().resize_horizontally(q.ncols() + d, 0.0);
    all.view_mut((0, q.ncols()), (d, d)).copy_from(&DMatrix::identity(d, d));
    let full = gram_schmidt(&all, 1e-10);
    full.columns(q.ncols(), full.ncols() - q.ncols()).into_owned()
}

/// Dense solve of `T_Z x = y` squared by terminal rows.
///
/// Unknowns are all of `x_1, ..., x_N`. Rows: `x_1 in Z` (via the orthogonal
/// complement of `Z`), the `N-1` blocks `(m+1)(x_{m+1} - A_m x_m) = y_{m+1}`,
/// and `W^T Q_N x_N = 0` with `W` spanning `A(N,1) Z` (`Q_N = I` when absent).
pub fn dense_tz_solve(
    seq: &OperatorSequence,
    z: &DMatrix<f64>,
    q_terminal: Option<&DMatrix<f64>>,
    y: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    let d = seq.dimension();
    let horizon = seq.horizon();
    check_limits(d, horizon)?;
    if y.len() != horizon {
        return Err(Error::OracleLimit(format!("rhs has {} entries, need {horizon}", y.len())));
    }
    let zq = gram_schmidt(z, 1e-12);
    let zperp = complement(&zq);
    let w = gram_schmidt(&(dense_cocycle(seq, horizon, 1)? * &zq), 1e-12);
    let q = q_terminal.cloned().unwrap_or_else(|| DMatrix::identity(d, d));
    let size = horizon * d;
    let mut mat = DMatrix::zeros(size, size);
    let mut rhs = DVector::zeros(size);
    let mut row = 0;
    for r in 0..zperp.ncols() {
        for j in 0..d {
            mat[(row, j)] = zperp[(j, r)];
        }
        row += 1;
    }
    for m in 1..horizon {
        let a = seq.get(m)?;
        let w_m = (m + 1) as f64;
        for i in 0..d {
            mat[(row, m * d + i)] = w_m;
            for j in 0..d {
                mat[(row, (m - 1) * d + j)] = -w_m * a[(i, j)];
            }
            rhs[row] = y[m][i];
            row += 1;
        }
    }
    let terminal = w.transpose() * q;
    for r in 0..terminal.nrows() {
        for j in 0..d {
            mat[(row, (horizon - 1) * d + j)] = terminal[(r, j)];
        }
        row += 1;
    }
    if row != size {
        return Err(Error::Singular(format!(
            "A(N,1) Z has rank {} but Z has dimension {}",
            w.ncols(),
            zq.ncols()
        )));
    }
    let lu = mat.full_piv_lu();
    let x = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("dense truncation is singular".into()))?;
    Ok((0..horizon).map(|m| x.rows(m * d, d).into_owned()).collect())
}

/// Unit vectors of a subspace of dimension 1 or 2 at angle parameter `t`
/// (`t in {0, pi}` for lines).
fn on_sphere(basis: &DMatrix<f64>, t: f64) -> DVector<f64> {
    match basis.ncols() {
        1 => basis.column(0) * t.cos().signum(),
        _ => basis.column(0) * t.cos() + basis.column(1) * t.sin(),
    }
}

/// `inf { ||s + u|| : s in S, u in U, ||s|| = ||u|| = 1 }` by grid search
/// with `density` angles per circle, then a shrinking pattern search.
/// Returns 2 when either subspace is trivial.
pub fn exhaustive_gamma(
    stable: &DMatrix<f64>,
    unstable: &DMatrix<f64>,
    norm: &dyn Fn(&DVector<f64>) -> f64,
    density: usize,
) -> Result<f64> {
    let d = stable.nrows();
    check_limits(d, 1)?;
    if stable.ncols() == 0 || unstable.ncols() == 0 {
        return Ok(2.0);
    }
    if stable.ncols() > 2 || unstable.ncols() > 2 {
        return Err(Error::OracleLimit("subspaces of dimension above 2".into()));
    }
    let s = gram_schmidt(stable, 1e-12);
    let u = gram_schmidt(unstable, 1e-12);
    let angles = |b: &DMatrix<f64>| -> Vec<f64> {
        if b.ncols() == 1 {
            vec![0.0, std::f64::consts::PI]
        } else {
            (0..density)
                .map(|i| std::f64::consts::TAU * i as f64 / density as f64)
                .collect()
        }
    };
    let f = |ts: f64, tu: f64| {
        let a = on_sphere(&s, ts);
        let b = on_sphere(&u, tu);
        norm(&(&a / norm(&a) + &b / norm(&b)))
    };
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for &ts in &angles(&s) {
        for &tu in &angles(&u) {
            let v = f(ts, tu);
            if v < best.0 {
                best = (v, ts, tu);
            }
        }
    }
    let free_s = s.ncols() == 2;
    let free_u = u.ncols() == 2;
    let mut step = std::f64::consts::TAU / density as f64;
    while step > 1e-10 {
        let mut moved = false;
        for (ds, du) in [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)] {
            if (ds != 0.0 && !free_s) || (du != 0.0 && !free_u) {
                continue;
            }
            let (ts, tu) = (best.1 + ds * step, best.2 + du * step);
            let v = f(ts, tu);
            if v < best.0 {
                best = (v, ts, tu);
                moved = true;
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{make_generator, GeneratorSpec};
    use approx::assert_relative_eq;
    use serde_json::json;

    fn seq(kind: &str, params: serde_json::Value, d: usize, n: usize) -> OperatorSequence {
        make_generator(&GeneratorSpec::new(kind, params), d, n).unwrap()
    }

    #[test]
    fn cocycle_examples() {
        let id = seq("identity", json!({}), 2, 16);
        assert_eq!(dense_cocycle(&id, 9, 3).unwrap(), DMatrix::identity(2, 2));
        let diag = seq("diagonal-poly", json!({"lambda": 1.0}), 2, 16);
        let a = dense_cocycle(&diag, 12, 4).unwrap();
        assert_relative_eq!(a[(0, 0)], 4.0 / 12.0, epsilon = 1e-14);
        assert_relative_eq!(a[(1, 1)], 12.0 / 4.0, epsilon = 1e-14);
        assert!(matches!(dense_cocycle(&seq("identity", json!({}), 2, 65), 2, 1), Err(Error::OracleLimit(_))));
    }

    #[test]
    fn tz_solve_examples() {
        let c = seq("diagonal-poly", json!({"exponents": [-1.0]}), 1, 32);
        let zero: Vec<DVector<f64>> = vec![DVector::zeros(1); 32];
        let x = dense_tz_solve(&c, &DMatrix::zeros(1, 0), None, &zero).unwrap();
        assert!(x.iter().all(|v| v[0] == 0.0));
        let mut y = vec![DVector::from_element(1, 1.0); 32];
        y[0][0] = 0.0;
        let x = dense_tz_solve(&c, &DMatrix::zeros(1, 0), None, &y).unwrap();
        for (i, v) in x.iter().enumerate() {
            let n = (i + 1) as f64;
            assert_relative_eq!(v[0], (n - 1.0) / n, epsilon = 1e-12);
        }
    }

    #[test]
    fn gamma_examples() {
        let e = |v: [f64; 2]| DMatrix::from_column_slice(2, 1, &v);
        let euclid = |v: &DVector<f64>| v.norm();
        let g = exhaustive_gamma(&e([1.0, 0.0]), &e([0.0, 1.0]), &euclid, 64).unwrap();
        assert_relative_eq!(g, 2f64.sqrt(), epsilon = 1e-9);
        let th = std::f64::consts::FRAC_PI_3;
        let g = exhaustive_gamma(&e([1.0, 0.0]), &e([th.cos(), th.sin()]), &euclid, 64).unwrap();
        assert_relative_eq!(g, 1.0, epsilon = 1e-9);
        let plane = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let line = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 1.0]);
        let g = exhaustive_gamma(&plane, &line, &euclid, 256).unwrap();
        assert_relative_eq!(g, 2.0 * (std::f64::consts::FRAC_PI_8).sin(), epsilon = 1e-8);
    }
}
