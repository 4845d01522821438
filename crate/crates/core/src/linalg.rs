//! Small dense linear-algebra helpers shared by the analysis modules.
//!
//! Everything here works on `nalgebra` dynamic matrices; the dimensions in
//! play are tiny (d <= 4) so clarity wins over allocation tricks.

use nalgebra::{DMatrix, DVector, SVD};
use rand::Rng;
use rand_distr::StandardNormal;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Largest singular value.
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    if m.nrows() == 1 || m.ncols() == 1 {
        return m.norm();
    }
    if m.nrows() == 2 && m.ncols() == 2 {
        // sigma_max^2 = (t + sqrt(t^2 - 4 det^2)) / 2 with t the squared Frobenius norm
        let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
        let t = a * a + b * b + c * c + d * d;
        let det = a * d - b * c;
        let disc = ((t - 2.0 * det.abs()) * (t + 2.0 * det.abs())).max(0.0);
        return ((t + disc.sqrt()) / 2.0).sqrt();
    }
    SVD::new(m.clone(), false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Singular values in descending order.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    SVD::new(m.clone(), false, false)
        .singular_values
        .iter()
        .copied()
        .collect()
}

/// Smallest over largest singular value; 0 for an empty or zero matrix.
pub fn rcond(m: &Matrix) -> f64 {
    let sv = singular_values(m);
    match (sv.first(), sv.last()) {
        (Some(&hi), Some(&lo)) if hi > 0.0 => lo / hi,
        _ => 0.0,
    }
}

/// Orthonormal basis of the column span, keeping directions whose singular
/// value exceeds `rel_tol * sigma_max`. Returns the basis and the ratio of the
/// smallest kept singular value to the largest.
pub fn orthonormal_basis(cols: &Matrix, rel_tol: f64) -> (Matrix, f64) {
    let d = cols.nrows();
    if cols.ncols() == 0 || d == 0 {
        return (Matrix::zeros(d, 0), 1.0);
    }
    let padded = pad_square(cols);
    let svd = SVD::new(padded, true, false);
    let u = svd.u.expect("left singular vectors requested");
    let sv = &svd.singular_values;
    let top = sv[0];
    if top == 0.0 {
        return (Matrix::zeros(d, 0), 0.0);
    }
    let rank = sv.iter().filter(|&&s| s > rel_tol * top).count();
    let kept_ratio = sv[rank.max(1) - 1] / top;
    (u.columns(0, rank).into_owned(), kept_ratio)
}

/// Orthonormal basis of the orthogonal complement of span(`basis`).
/// `basis` is assumed to have orthonormal (or at least independent) columns.
pub fn orthogonal_complement(basis: &Matrix) -> Matrix {
    let d = basis.nrows();
    let k = basis.ncols();
    if k == 0 {
        return Matrix::identity(d, d);
    }
    if k >= d {
        return Matrix::zeros(d, 0);
    }
    let svd = SVD::new(pad_square(basis), true, false);
    let u = svd.u.expect("left singular vectors requested");
    u.columns(k, d - k).into_owned()
}

/// Orthonormal basis of the null space of `m` (a `r x d` matrix), treating
/// singular values below `rel_tol * sigma_max` as zero.
pub fn null_space(m: &Matrix, rel_tol: f64) -> Matrix {
    let d = m.ncols();
    if m.nrows() == 0 {
        return Matrix::identity(d, d);
    }
    let (row_space, _) = orthonormal_basis(&m.transpose(), rel_tol);
    orthogonal_complement(&row_space)
}

/// Cosines of the principal angles between two subspaces given by orthonormal
/// bases, largest cosine (smallest angle) first.
pub fn principal_cosines(a: &Matrix, b: &Matrix) -> Vec<f64> {
    if a.ncols() == 0 || b.ncols() == 0 {
        return Vec::new();
    }
    singular_values(&(a.transpose() * b))
        .into_iter()
        .map(|c| c.min(1.0))
        .collect()
}

/// Sine of the largest principal angle between two subspaces of equal
/// dimension (the gap / subspace distance). Zero-dimensional pairs give 0.
pub fn subspace_distance(a: &Matrix, b: &Matrix) -> f64 {
    if a.ncols() != b.ncols() {
        return 1.0;
    }
    if a.ncols() == 0 {
        return 0.0;
    }
    // || (I - B B^T) A ||_2 is the sine of the largest principal angle.
    let proj = b * b.transpose();
    let resid = a - &proj * a;
    spectral_norm(&resid)
}

/// Hstack two matrices with the same number of rows.
pub fn hstack(a: &Matrix, b: &Matrix) -> Matrix {
    let d = a.nrows();
    let mut out = Matrix::zeros(d, a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

fn pad_square(cols: &Matrix) -> Matrix {
    let d = cols.nrows();
    let k = cols.ncols();
    if k >= d {
        return cols.clone();
    }
    let mut padded = Matrix::zeros(d, d);
    padded.columns_mut(0, k).copy_from(cols);
    padded
}

/// Ordinary least-squares line through `(x, y)`; returns `(slope, intercept, r_squared)`.
/// Degenerate inputs (fewer than two distinct abscissae) give slope 0.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len().min(ys.len());
    if n == 0 {
        return (0.0, 0.0, 0.0);
    }
    let nf = n as f64;
    let mx = xs[..n].iter().sum::<f64>() / nf;
    let my = ys[..n].iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let dx = xs[i] - mx;
        let dy = ys[i] - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx <= f64::EPSILON * nf {
        return (0.0, my, 0.0);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy <= 0.0 {
        1.0
    } else {
        (sxy * sxy / (sxx * syy)).min(1.0)
    };
    (slope, intercept, r2)
}

/// A standard Gaussian vector normalised to Euclidean length one.
pub fn random_unit<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vector {
    loop {
        let v = Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// A standard Gaussian matrix.
pub fn random_gaussian<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Geometric grid of integers in `[lo, hi]` with roughly `count` points,
/// always containing both endpoints, strictly increasing.
pub fn geometric_grid(lo: usize, hi: usize, count: usize) -> Vec<usize> {
    if hi < lo {
        return Vec::new();
    }
    if hi == lo || count <= 1 {
        return if hi == lo { vec![lo] } else { vec![lo, hi] };
    }
    let ratio = (hi as f64 / lo as f64).powf(1.0 / (count - 1) as f64);
    let mut out = Vec::with_capacity(count);
    let mut v = lo as f64;
    for _ in 0..count {
        let k = v.round() as usize;
        let k = k.clamp(lo, hi);
        if out.last().is_none_or(|&last| k > last) {
            out.push(k);
        }
        v *= ratio;
    }
    if *out.last().unwrap() != hi {
        out.push(hi);
    }
    out
}

pub fn is_power_of_two_ge2(n: usize) -> bool {
    n >= 2 && n.is_power_of_two()
}
