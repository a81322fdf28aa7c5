//! Small dense helpers shared by the numeric modules.

use nalgebra::{DMatrix, DVector};

/// Lower Cholesky factor with a strict `pivot > 0` test and no slack.
pub(crate) fn cholesky_lower(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut pivot = a[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if !(pivot > 0.0) || !pivot.is_finite() {
            return None;
        }
        let d = pivot.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

/// Solves `L X = B` for lower-triangular `L`.
pub(crate) fn solve_lower(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = b.clone();
    l.solve_lower_triangular_mut(&mut x);
    x
}

/// Solves `Lᵀ X = B` for lower-triangular `L`.
pub(crate) fn solve_lower_transpose(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = b.clone();
    l.tr_solve_lower_triangular_mut(&mut x);
    x
}

pub(crate) fn solve_lower_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut x = b.clone();
    l.solve_lower_triangular_mut(&mut x);
    x
}

pub(crate) fn solve_lower_transpose_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut x = b.clone();
    l.tr_solve_lower_triangular_mut(&mut x);
    x
}

pub(crate) fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Largest entrywise violation of `|a_ij - a_ji| <= 1e-12 * max(1, |a_ij|)`,
/// as a ratio to the allowed slack (values above 1 fail).
pub(crate) fn asymmetry_ratio(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = (a[(i, j)] - a[(j, i)]).abs();
            let scale = 1e-12 * a[(i, j)].abs().max(a[(j, i)].abs()).max(1.0);
            worst = worst.max(diff / scale);
        }
    }
    worst
}

/// Rank-one update `a += alpha * u vᵀ`.
pub(crate) fn add_outer(a: &mut DMatrix<f64>, alpha: f64, u: &DVector<f64>, v: &DVector<f64>) {
    a.ger(alpha, u, v, 1.0);
}

/// Orthonormal basis of the column span (thin QR).
pub(crate) fn orthonormal_columns(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().qr().q()
}

/// `A` with `A Aᵀ = S` for symmetric PSD `S`: the Cholesky factor when it
/// exists, otherwise `V diag(sqrt(max(λ, 0)))` from an eigendecomposition.
pub(crate) fn psd_factor(s: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(l) = cholesky_lower(s) {
        return l;
    }
    let eig = nalgebra::SymmetricEigen::new(symmetrize(s));
    let mut v = eig.eigenvectors;
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        v.column_mut(k).scale_mut(l.max(0.0).sqrt());
    }
    v
}
