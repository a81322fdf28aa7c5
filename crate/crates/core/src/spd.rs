//! Symmetric positive-definite matrices and the affine-invariant geometry on them.
//!
//! The generalized eigenproblem `A v = λ B v` is solved by Cholesky reduction:
//! with `B = L Lᵀ`, the eigenvalues are those of the symmetric matrix
//! `L⁻¹ A L⁻ᵀ` and the eigenvectors map back through `L⁻ᵀ`, which makes them
//! `B`-orthonormal. `B⁻¹A` is never formed.
//!
//! The affine-invariant distance is `sqrt(Σ_k log² λ_k)` over the generalized
//! eigenvalues of the pair. Its gradient uses the per-eigenvalue sensitivities
//! `∂λ_k/∂A = v_k v_kᵀ` and `∂λ_k/∂B = -λ_k v_k v_kᵀ`. Because only a symmetric
//! function of the spectrum is differentiated, any `B`-orthonormal eigenbasis
//! gives the same gradient, repeated eigenvalues included.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::linalg;
use crate::{Error, Result};

/// Distances at or below this are treated as coincident for gradient purposes.
pub const DEGENERATE_DISTANCE: f64 = 1e-12;

/// A symmetric positive-definite matrix with its lower Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    matrix: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl SpdMatrix {
    /// Validates and wraps `matrix`.
    ///
    /// Asymmetry within `1e-12 · max(1, |a_ij|)` is repaired by averaging with
    /// the transpose; anything larger is rejected. Definiteness is checked by a
    /// Cholesky factorization with strictly positive pivots.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::NotSquare {
                rows: matrix.nrows(),
                cols: matrix.ncols(),
            });
        }
        if matrix.nrows() == 0 {
            return Err(Error::InvalidArgument("empty matrix".into()));
        }
        let ratio = linalg::asymmetry_ratio(&matrix);
        if ratio > 1.0 {
            return Err(Error::NotSymmetric(ratio * 1e-12));
        }
        let matrix = linalg::symmetrize(&matrix);
        let chol = linalg::cholesky_lower(&matrix).ok_or(Error::NotPositiveDefinite)?;
        Ok(Self { matrix, chol })
    }

    pub fn identity(dim: usize) -> Self {
        let matrix = DMatrix::identity(dim, dim);
        Self {
            chol: matrix.clone(),
            matrix,
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    /// Lower factor `L` with `L Lᵀ = self`.
    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// `log det`, as twice the sum of log pivots.
    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        let linv = linalg::solve_lower(&self.chol, &DMatrix::identity(n, n));
        linalg::symmetrize(&(linv.transpose() * linv))
    }

    /// `self⁻¹ v`.
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        let y = linalg::solve_lower_vec(&self.chol, v);
        linalg::solve_lower_transpose_vec(&self.chol, &y)
    }

    /// `vᵀ self⁻¹ v`.
    pub fn inverse_quadratic_form(&self, v: &DVector<f64>) -> f64 {
        linalg::solve_lower_vec(&self.chol, v).norm_squared()
    }

    /// `Gᵀ self G` for square invertible `G`.
    pub fn congruence(&self, g: &DMatrix<f64>) -> Result<Self> {
        if g.nrows() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: g.nrows(),
            });
        }
        Self::new(linalg::symmetrize(&(g.transpose() * &self.matrix * g)))
    }

    /// `self + ridge · I`.
    pub fn add_ridge(&self, ridge: f64) -> Result<Self> {
        let mut m = self.matrix.clone();
        for i in 0..self.dim() {
            m[(i, i)] += ridge;
        }
        Self::new(m)
    }
}

/// Eigenpairs of `A v = λ B v`, eigenvalues ascending, eigenvectors `B`-orthonormal
/// (one per column).
#[derive(Debug, Clone)]
pub struct GeneralizedSpectrum {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

/// Eigen-decomposition of the symmetric `a` relative to `b`; `a` need only be
/// symmetric, so this also serves rank-deficient scatter matrices.
pub(crate) fn reduced_symmetric_eigen(a: &DMatrix<f64>, b: &SpdMatrix) -> Result<GeneralizedSpectrum> {
    if a.nrows() != b.dim() || a.ncols() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: b.dim(),
            found: a.nrows(),
        });
    }
    let l = b.cholesky_factor();
    let x = linalg::solve_lower(l, a);
    let c = linalg::symmetrize(&linalg::solve_lower(l, &x.transpose()));
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let n = b.dim();
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let sorted = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    let eigenvectors = linalg::solve_lower_transpose(l, &sorted);
    Ok(GeneralizedSpectrum {
        eigenvalues,
        eigenvectors,
    })
}

/// Solves `A v = λ B v` for SPD `A` and `B`.
pub fn generalized_eigen(a: &SpdMatrix, b: &SpdMatrix) -> Result<GeneralizedSpectrum> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: b.dim(),
            found: a.dim(),
        });
    }
    let spectrum = reduced_symmetric_eigen(a.as_matrix(), b)?;
    if spectrum.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(spectrum)
}

/// `sqrt(Σ_k log² λ_k)` over the generalized eigenvalues of `(a, b)`.
pub fn affine_invariant_distance(a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
    let spectrum = generalized_eigen(a, b)?;
    Ok(log_spectrum_norm(&spectrum.eigenvalues))
}

fn log_spectrum_norm(eigenvalues: &DVector<f64>) -> f64 {
    eigenvalues.iter().map(|l| l.ln().powi(2)).sum::<f64>().sqrt()
}

/// Gradients of [`affine_invariant_distance`] with respect to both arguments.
///
/// Both outputs are symmetric and act on symmetric perturbations:
/// `δd = tr(dA δA) + tr(dB δB)`.
pub fn affine_invariant_gradient(a: &SpdMatrix, b: &SpdMatrix) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    match affine_invariant_with_gradient(a, b)? {
        (_, Some(grads)) => Ok(grads),
        (d, None) => Err(Error::DegenerateDistance(d)),
    }
}

pub(crate) type GradientPair = (DMatrix<f64>, DMatrix<f64>);

/// Distance and gradients in one eigensolve; `None` gradients when degenerate.
pub(crate) fn affine_invariant_with_gradient(a: &SpdMatrix, b: &SpdMatrix) -> Result<(f64, Option<GradientPair>)> {
    let spectrum = generalized_eigen(a, b)?;
    let d = log_spectrum_norm(&spectrum.eigenvalues);
    if d <= DEGENERATE_DISTANCE {
        return Ok((d, None));
    }
    let n = a.dim();
    let mut grad_a = DMatrix::zeros(n, n);
    let mut grad_b = DMatrix::zeros(n, n);
    for (k, &lambda) in spectrum.eigenvalues.iter().enumerate() {
        let v = spectrum.eigenvectors.column(k).into_owned();
        let log_l = lambda.ln();
        linalg::add_outer(&mut grad_a, log_l / (lambda * d), &v, &v);
        linalg::add_outer(&mut grad_b, -log_l / d, &v, &v);
    }
    Ok((d, Some((linalg::symmetrize(&grad_a), linalg::symmetrize(&grad_b)))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::E;

    fn spd(rows: &[&[f64]]) -> SpdMatrix {
        let n = rows.len();
        SpdMatrix::new(DMatrix::from_fn(n, n, |i, j| rows[i][j])).unwrap()
    }

    #[test]
    fn rejects_asymmetric_and_indefinite() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(SpdMatrix::new(asym), Err(Error::NotSymmetric(_))));
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(SpdMatrix::new(indef), Err(Error::NotPositiveDefinite)));
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(SpdMatrix::new(singular), Err(Error::NotPositiveDefinite)));
    }

    #[test]
    fn tiny_asymmetry_is_repaired() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5 + 1e-14, 1.0]);
        let s = SpdMatrix::new(m).unwrap();
        assert_eq!(s.as_matrix()[(0, 1)], s.as_matrix()[(1, 0)]);
    }

    #[test]
    fn log_det_matches_determinant() {
        let s = spd(&[&[4.0, 1.0, 0.0], &[1.0, 3.0, 0.5], &[0.0, 0.5, 2.0]]);
        assert_relative_eq!(s.log_det(), s.as_matrix().determinant().ln(), epsilon = 1e-12);
    }

    #[test]
    fn identity_reference_gives_ordinary_eigenvalues() {
        let a = SpdMatrix::from_diagonal(&[4.0, 1.0]).unwrap();
        let sp = generalized_eigen(&a, &SpdMatrix::identity(2)).unwrap();
        assert_relative_eq!(sp.eigenvalues[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(sp.eigenvalues[1], 4.0, epsilon = 1e-14);
    }

    #[test]
    fn self_pair_has_unit_spectrum() {
        let a = spd(&[&[2.0, 0.3], &[0.3, 1.0]]);
        let sp = generalized_eigen(&a, &a).unwrap();
        for l in sp.eigenvalues.iter() {
            assert_relative_eq!(*l, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn eigenvectors_are_b_orthonormal_and_solve_the_pencil() {
        let a = spd(&[&[5.0, 1.0, 0.2], &[1.0, 3.0, 0.4], &[0.2, 0.4, 2.0]]);
        let b = spd(&[&[2.0, 0.5, 0.0], &[0.5, 1.5, 0.3], &[0.0, 0.3, 1.0]]);
        let sp = generalized_eigen(&a, &b).unwrap();
        let gram = sp.eigenvectors.transpose() * b.as_matrix() * &sp.eigenvectors;
        assert_relative_eq!(gram, DMatrix::identity(3, 3), epsilon = 1e-12);
        for k in 0..3 {
            let v = sp.eigenvectors.column(k);
            let residual = a.as_matrix() * v - b.as_matrix() * v * sp.eigenvalues[k];
            assert!(residual.norm() <= 1e-8 * a.as_matrix().norm());
        }
        assert!(sp.eigenvalues[0] <= sp.eigenvalues[1] && sp.eigenvalues[1] <= sp.eigenvalues[2]);
    }

    #[test]
    fn matches_whitened_spectrum() {
        // eigenvalues of B^{-1/2} A B^{-1/2} via the symmetric square root
        let a = spd(&[&[3.0, 0.7], &[0.7, 2.0]]);
        let b = spd(&[&[1.5, -0.2], &[-0.2, 0.8]]);
        let eb = SymmetricEigen::new(b.as_matrix().clone());
        let inv_sqrt = &eb.eigenvectors
            * DMatrix::from_diagonal(&eb.eigenvalues.map(|x| 1.0 / x.sqrt()))
            * eb.eigenvectors.transpose();
        let mut expected: Vec<f64> = SymmetricEigen::new(&inv_sqrt * a.as_matrix() * &inv_sqrt)
            .eigenvalues
            .iter()
            .copied()
            .collect();
        expected.sort_by(f64::total_cmp);
        let sp = generalized_eigen(&a, &b).unwrap();
        for (got, want) in sp.eigenvalues.iter().zip(expected) {
            assert_relative_eq!(*got, want, max_relative = 1e-9);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let err = generalized_eigen(&SpdMatrix::identity(2), &SpdMatrix::identity(3)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn distance_examples() {
        let i2 = SpdMatrix::identity(2);
        assert_eq!(affine_invariant_distance(&i2, &i2).unwrap(), 0.0);
        let a = SpdMatrix::from_diagonal(&[E * E, 1.0]).unwrap();
        assert_relative_eq!(affine_invariant_distance(&a, &i2).unwrap(), 2.0, epsilon = 1e-14);
        let b = SpdMatrix::from_diagonal(&[E * E, E * E]).unwrap();
        assert_relative_eq!(
            affine_invariant_distance(&b, &i2).unwrap(),
            2.0 * 2f64.sqrt(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn gradient_closed_form_example() {
        let a = SpdMatrix::from_diagonal(&[E * E, 1.0]).unwrap();
        let (ga, gb) = affine_invariant_gradient(&a, &SpdMatrix::identity(2)).unwrap();
        assert_relative_eq!(ga[(0, 0)], (-2.0f64).exp(), epsilon = 1e-14);
        assert_relative_eq!(ga[(0, 1)], 0.0, epsilon = 1e-14);
        assert_relative_eq!(ga[(1, 1)], 0.0, epsilon = 1e-14);
        // dB = -(1/d) log(e²) e1 e1ᵀ = -e1 e1ᵀ
        assert_relative_eq!(gb[(0, 0)], -1.0, epsilon = 1e-14);
    }

    #[test]
    fn gradient_degenerate_at_coincidence() {
        let a = spd(&[&[2.0, 0.3], &[0.3, 1.0]]);
        assert!(matches!(
            affine_invariant_gradient(&a, &a),
            Err(Error::DegenerateDistance(_))
        ));
    }

    #[test]
    fn gradient_handles_repeated_eigenvalues() {
        // λ = e² with multiplicity two; any orthonormal eigenbasis is valid
        let a = SpdMatrix::from_diagonal(&[E * E, E * E, 0.5]).unwrap();
        let i3 = SpdMatrix::identity(3);
        let (ga, _) = affine_invariant_gradient(&a, &i3).unwrap();
        let d = affine_invariant_distance(&a, &i3).unwrap();
        let want = 2.0 / (E * E * d);
        assert_relative_eq!(ga[(0, 0)], want, epsilon = 1e-12);
        assert_relative_eq!(ga[(1, 1)], want, epsilon = 1e-12);
        assert_relative_eq!(ga[(0, 1)], 0.0, epsilon = 1e-12);
    }
}
