//! Dissimilarities between Gaussian distributions and their gradients.
//!
//! | kind | value |
//! |------|-------|
//! | `FisherRaoCalvoOller` | `d_AI(Ω_p, Ω_q) / √2`, `Ω = [[Σ + μμᵀ, μ], [μᵀ, 1]]` |
//! | `FisherRaoZeroMean` | `d_AI(Σ_p, Σ_q) / √2`, means ignored |
//! | `Bhattacharyya` | `⅛ d_M²(μ_p, μ_q; Σ̄) + ½ log(det Σ̄ / sqrt(det Σ_p det Σ_q))` |
//! | `Hellinger` | `sqrt(1 - exp(-d_B))` |
//! | `MahalanobisSq` | `(μ_p - μ_q)ᵀ Σ̄⁻¹ (μ_p - μ_q)` |
//!
//! `Σ̄ = (Σ_p + Σ_q) / 2` throughout. The Calvo-Oller value is a lower bound on
//! the Fisher-Rao distance between general Gaussians and is exact when the
//! means coincide. For `FisherRaoZeroMean` the covariance slot is read as a
//! second-moment matrix.

use std::f64::consts::SQRT_2;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::spd::{self, SpdMatrix, DEGENERATE_DISTANCE};
use crate::{Error, Result};

/// Parameters `(μ, Σ)` of a Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    mean: DVector<f64>,
    covariance: SpdMatrix,
}

impl GaussianParams {
    pub fn new(mean: DVector<f64>, covariance: SpdMatrix) -> Result<Self> {
        if mean.len() != covariance.dim() {
            return Err(Error::DimensionMismatch {
                expected: covariance.dim(),
                found: mean.len(),
            });
        }
        Ok(Self { mean, covariance })
    }

    pub fn zero_mean(covariance: SpdMatrix) -> Self {
        Self {
            mean: DVector::zeros(covariance.dim()),
            covariance,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &SpdMatrix {
        &self.covariance
    }

    /// `x ↦ Gᵀx` applied to the distribution: `(Gᵀμ, GᵀΣG)`.
    pub fn transform(&self, g: &DMatrix<f64>) -> Result<Self> {
        Self::new(g.transpose() * &self.mean, self.covariance.congruence(g)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    FisherRaoCalvoOller,
    FisherRaoZeroMean,
    Bhattacharyya,
    Hellinger,
    MahalanobisSq,
}

impl DistanceKind {
    pub const ALL: [DistanceKind; 5] = [
        DistanceKind::FisherRaoCalvoOller,
        DistanceKind::FisherRaoZeroMean,
        DistanceKind::Bhattacharyya,
        DistanceKind::Hellinger,
        DistanceKind::MahalanobisSq,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DistanceKind::FisherRaoCalvoOller => "fisher_rao_calvo_oller",
            DistanceKind::FisherRaoZeroMean => "fisher_rao_zero_mean",
            DistanceKind::Bhattacharyya => "bhattacharyya",
            DistanceKind::Hellinger => "hellinger",
            DistanceKind::MahalanobisSq => "mahalanobis_sq",
        }
    }

    /// Whether the distance reads second moments instead of covariances.
    pub fn uses_second_moments(self) -> bool {
        matches!(self, DistanceKind::FisherRaoZeroMean)
    }
}

impl fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DistanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DistanceKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = DistanceKind::ALL.iter().map(|k| k.as_str()).collect();
                Error::InvalidArgument(format!("unknown distance kind `{s}` (expected one of: {})", names.join(", ")))
            })
    }
}

fn check_same_dim(p: &GaussianParams, q: &GaussianParams) -> Result<()> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            found: q.dim(),
        });
    }
    Ok(())
}

/// `Ω = [[Σ + μμᵀ, μ], [μᵀ, 1]]`, an SPD matrix of dimension `m + 1`.
pub fn calvo_oller_embedding(p: &GaussianParams) -> SpdMatrix {
    let m = p.dim();
    let mu = p.mean();
    let sigma = p.covariance().as_matrix();
    let omega = DMatrix::from_fn(m + 1, m + 1, |i, j| match (i < m, j < m) {
        (true, true) => sigma[(i, j)] + mu[i] * mu[j],
        (true, false) => mu[i],
        (false, true) => mu[j],
        (false, false) => 1.0,
    });
    // Schur complement of the corner is Σ, so this only fails on roundoff at
    // extreme conditioning.
    SpdMatrix::new(omega).expect("Calvo-Oller embedding of a valid Gaussian is SPD")
}

pub fn calvo_oller_distance(p: &GaussianParams, q: &GaussianParams) -> Result<f64> {
    check_same_dim(p, q)?;
    let d = spd::affine_invariant_distance(&calvo_oller_embedding(p), &calvo_oller_embedding(q))?;
    Ok(d / SQRT_2)
}

/// Fisher-Rao distance between `N(0, a)` and `N(0, b)`.
pub fn fisher_rao_zero_mean(a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
    Ok(spd::affine_invariant_distance(a, b)? / SQRT_2)
}

pub fn mahalanobis_sq(mu1: &DVector<f64>, mu2: &DVector<f64>, sigma: &SpdMatrix) -> Result<f64> {
    if mu1.len() != sigma.dim() || mu2.len() != sigma.dim() {
        return Err(Error::DimensionMismatch {
            expected: sigma.dim(),
            found: if mu1.len() != sigma.dim() { mu1.len() } else { mu2.len() },
        });
    }
    Ok(sigma.inverse_quadratic_form(&(mu1 - mu2)))
}

/// Exact Fisher-Rao distance between Gaussians sharing the covariance `sigma`:
/// `√2 · arccosh(1 + d_M² / 4)`.
pub fn fisher_rao_equal_cov(mu1: &DVector<f64>, mu2: &DVector<f64>, sigma: &SpdMatrix) -> Result<f64> {
    let dm2 = mahalanobis_sq(mu1, mu2, sigma)?;
    Ok(SQRT_2 * (1.0 + dm2 / 4.0).acosh())
}

fn average_covariance(p: &GaussianParams, q: &GaussianParams) -> Result<SpdMatrix> {
    SpdMatrix::new((p.covariance().as_matrix() + q.covariance().as_matrix()) * 0.5)
}

pub fn bhattacharyya(p: &GaussianParams, q: &GaussianParams) -> Result<f64> {
    check_same_dim(p, q)?;
    let avg = average_covariance(p, q)?;
    let dm2 = avg.inverse_quadratic_form(&(p.mean() - q.mean()));
    let log_ratio = avg.log_det() - 0.5 * (p.covariance().log_det() + q.covariance().log_det());
    Ok(dm2 / 8.0 + 0.5 * log_ratio)
}

/// Zero-mean Bhattacharyya distance through the generalized spectrum of `(a, b)`:
/// `½ Σ_k [log((1 + λ_k) / 2) - ½ log λ_k]`.
///
/// Agrees with [`bhattacharyya`] on zero-mean Gaussians. The leading ½ comes
/// from the `½ log det` term; without it the sum is twice the distance.
pub fn bhattacharyya_zero_mean_spectral(a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
    let spectrum = spd::generalized_eigen(a, b)?;
    let s: f64 = spectrum
        .eigenvalues
        .iter()
        .map(|&l| ((1.0 + l) / 2.0).ln() - 0.5 * l.ln())
        .sum();
    Ok(0.5 * s)
}

/// Largest `f64` below 1. The true value is always below 1 but rounds up once
/// `exp(-d_B)` underflows the spacing near 1.
const HELLINGER_CEILING: f64 = 1.0 - f64::EPSILON / 2.0;

fn hellinger_from_bhattacharyya(db: f64) -> f64 {
    // 1 - exp(-d_B) without cancellation near zero
    (-(-db).exp_m1()).max(0.0).sqrt().min(HELLINGER_CEILING)
}

pub fn hellinger(p: &GaussianParams, q: &GaussianParams) -> Result<f64> {
    Ok(hellinger_from_bhattacharyya(bhattacharyya(p, q)?))
}

fn pooled_mahalanobis_sq(p: &GaussianParams, q: &GaussianParams) -> Result<f64> {
    check_same_dim(p, q)?;
    let avg = average_covariance(p, q)?;
    Ok(avg.inverse_quadratic_form(&(p.mean() - q.mean())))
}

/// Dispatches on `kind`. Symmetric in `(p, q)` for every kind.
pub fn distance(kind: DistanceKind, p: &GaussianParams, q: &GaussianParams) -> Result<f64> {
    check_same_dim(p, q)?;
    match kind {
        DistanceKind::FisherRaoCalvoOller => calvo_oller_distance(p, q),
        DistanceKind::FisherRaoZeroMean => fisher_rao_zero_mean(p.covariance(), q.covariance()),
        DistanceKind::Bhattacharyya => bhattacharyya(p, q),
        DistanceKind::Hellinger => hellinger(p, q),
        DistanceKind::MahalanobisSq => pooled_mahalanobis_sq(p, q),
    }
}

/// Gradient of a pairwise distance with respect to both parameter sets.
/// Covariance blocks are symmetric and act on symmetric perturbations.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGradient {
    pub mean_p: DVector<f64>,
    pub cov_p: DMatrix<f64>,
    pub mean_q: DVector<f64>,
    pub cov_q: DMatrix<f64>,
}

impl PairGradient {
    fn zeros(m: usize) -> Self {
        Self {
            mean_p: DVector::zeros(m),
            cov_p: DMatrix::zeros(m, m),
            mean_q: DVector::zeros(m),
            cov_q: DMatrix::zeros(m, m),
        }
    }

    fn scaled(mut self, s: f64) -> Self {
        self.mean_p *= s;
        self.cov_p *= s;
        self.mean_q *= s;
        self.cov_q *= s;
        self
    }
}

/// Analytic gradient of [`distance`].
///
/// Fisher-Rao and Hellinger distances are not differentiable where they vanish;
/// those return [`Error::DegenerateDistance`] at coincident parameters, and the
/// caller treats the pair as contributing no gradient.
pub fn distance_gradient(kind: DistanceKind, p: &GaussianParams, q: &GaussianParams) -> Result<PairGradient> {
    match distance_with_gradient(kind, p, q)? {
        (_, Some(g)) => Ok(g),
        (d, None) => Err(Error::DegenerateDistance(d)),
    }
}

/// Value and gradient together, sharing factorizations. The gradient is `None`
/// exactly where [`distance_gradient`] reports a degenerate distance.
pub fn distance_with_gradient(
    kind: DistanceKind,
    p: &GaussianParams,
    q: &GaussianParams,
) -> Result<(f64, Option<PairGradient>)> {
    check_same_dim(p, q)?;
    match kind {
        DistanceKind::FisherRaoCalvoOller => calvo_oller_with_gradient(p, q),
        DistanceKind::FisherRaoZeroMean => {
            let (d, grads) = spd::affine_invariant_with_gradient(p.covariance(), q.covariance())?;
            let grads = grads.map(|(ga, gb)| {
                let m = p.dim();
                PairGradient {
                    mean_p: DVector::zeros(m),
                    cov_p: ga,
                    mean_q: DVector::zeros(m),
                    cov_q: gb,
                }
                .scaled(1.0 / SQRT_2)
            });
            Ok((d / SQRT_2, grads))
        }
        DistanceKind::Bhattacharyya => {
            let (d, g) = bhattacharyya_with_gradient(p, q)?;
            Ok((d, Some(g)))
        }
        DistanceKind::Hellinger => {
            let (db, g) = bhattacharyya_with_gradient(p, q)?;
            let h = hellinger_from_bhattacharyya(db);
            if h <= DEGENERATE_DISTANCE {
                return Ok((h, None));
            }
            // dh/dd_B = exp(-d_B) / (2h)
            Ok((h, Some(g.scaled((-db).exp() / (2.0 * h)))))
        }
        DistanceKind::MahalanobisSq => {
            let avg = average_covariance(p, q)?;
            let delta = p.mean() - q.mean();
            let a = avg.solve(&delta);
            let d = delta.dot(&a);
            let mut g = PairGradient::zeros(p.dim());
            g.mean_p = &a * 2.0;
            g.mean_q = &a * -2.0;
            // ∂/∂Σ̄ = -a aᵀ, and Σ̄ takes half of each covariance
            linalg::add_outer(&mut g.cov_p, -0.5, &a, &a);
            g.cov_q = g.cov_p.clone();
            Ok((d, Some(g)))
        }
    }
}

fn calvo_oller_with_gradient(p: &GaussianParams, q: &GaussianParams) -> Result<(f64, Option<PairGradient>)> {
    let (d, grads) = spd::affine_invariant_with_gradient(&calvo_oller_embedding(p), &calvo_oller_embedding(q))?;
    let Some((ga, gb)) = grads else {
        return Ok((d / SQRT_2, None));
    };
    let (mean_p, cov_p) = pull_back_embedding(&ga, p.mean());
    let (mean_q, cov_q) = pull_back_embedding(&gb, q.mean());
    let g = PairGradient {
        mean_p,
        cov_p,
        mean_q,
        cov_q,
    };
    Ok((d / SQRT_2, Some(g.scaled(1.0 / SQRT_2))))
}

/// Chain rule through `Ω(μ, Σ)`: with `G = [[G₁₁, g], [gᵀ, ·]]`,
/// `∂/∂Σ = G₁₁` and `∂/∂μ = 2 (G₁₁ μ + g)`.
fn pull_back_embedding(g_omega: &DMatrix<f64>, mu: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let m = mu.len();
    let g11 = g_omega.view((0, 0), (m, m)).into_owned();
    let g12 = g_omega.view((0, m), (m, 1)).column(0).into_owned();
    let grad_mu = (&g11 * mu + g12) * 2.0;
    (grad_mu, g11)
}

fn bhattacharyya_with_gradient(p: &GaussianParams, q: &GaussianParams) -> Result<(f64, PairGradient)> {
    let avg = average_covariance(p, q)?;
    let delta = p.mean() - q.mean();
    let a = avg.solve(&delta);
    let dm2 = delta.dot(&a);
    let log_ratio = avg.log_det() - 0.5 * (p.covariance().log_det() + q.covariance().log_det());
    let d = dm2 / 8.0 + 0.5 * log_ratio;

    let avg_inv = avg.inverse();
    let mut shared = &avg_inv * 0.25;
    linalg::add_outer(&mut shared, -1.0 / 16.0, &a, &a);
    let cov_p = linalg::symmetrize(&(&shared - p.covariance().inverse() * 0.25));
    let cov_q = linalg::symmetrize(&(&shared - q.covariance().inverse() * 0.25));
    let g = PairGradient {
        mean_p: &a * 0.25,
        cov_p,
        mean_q: &a * -0.25,
        cov_q,
    };
    Ok((d, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::E;

    fn gauss(mean: &[f64], cov: &[f64]) -> GaussianParams {
        let m = mean.len();
        GaussianParams::new(
            DVector::from_column_slice(mean),
            SpdMatrix::new(DMatrix::from_row_slice(m, m, cov)).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn embedding_examples() {
        let p = GaussianParams::zero_mean(SpdMatrix::identity(2));
        assert_eq!(calvo_oller_embedding(&p).as_matrix(), &DMatrix::identity(3, 3));
        let q = gauss(&[1.0], &[1.0]);
        assert_eq!(
            calvo_oller_embedding(&q).as_matrix(),
            &DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0])
        );
    }

    #[test]
    fn embedding_determinant_is_covariance_determinant() {
        let p = gauss(&[0.3, -1.2, 2.0], &[2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 0.7]);
        assert_relative_eq!(
            calvo_oller_embedding(&p).log_det(),
            p.covariance().log_det(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn calvo_oller_unit_mean_gap_is_twice_log_golden_ratio() {
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        let d = calvo_oller_distance(&gauss(&[0.0], &[1.0]), &gauss(&[1.0], &[1.0])).unwrap();
        assert_relative_eq!(d, 2.0 * phi.ln(), epsilon = 1e-14);
        assert_relative_eq!(d, 0.962424, epsilon = 1e-6);
    }

    #[test]
    fn calvo_oller_is_exact_for_equal_means() {
        let p = gauss(&[1.0, -2.0], &[2.0, 0.4, 0.4, 1.0]);
        let q = gauss(&[1.0, -2.0], &[0.5, -0.1, -0.1, 3.0]);
        let exact = fisher_rao_zero_mean(p.covariance(), q.covariance()).unwrap();
        assert_relative_eq!(calvo_oller_distance(&p, &q).unwrap(), exact, epsilon = 1e-10);
    }

    #[test]
    fn zero_mean_fisher_rao_1d() {
        let a = SpdMatrix::from_diagonal(&[E * E]).unwrap();
        let one = SpdMatrix::identity(1);
        assert_relative_eq!(fisher_rao_zero_mean(&a, &one).unwrap(), SQRT_2, epsilon = 1e-14);
        assert_eq!(fisher_rao_zero_mean(&one, &one).unwrap(), 0.0);
    }

    #[test]
    fn mahalanobis_examples() {
        let mu1 = DVector::from_column_slice(&[3.0, 4.0]);
        let zero = DVector::zeros(2);
        let i2 = SpdMatrix::identity(2);
        assert_relative_eq!(mahalanobis_sq(&mu1, &zero, &i2).unwrap(), 25.0, epsilon = 1e-14);
        assert_eq!(mahalanobis_sq(&mu1, &mu1, &i2).unwrap(), 0.0);
        let bad = DVector::zeros(3);
        assert!(mahalanobis_sq(&bad, &zero, &i2).is_err());
    }

    #[test]
    fn equal_covariance_fisher_rao() {
        let i1 = SpdMatrix::identity(1);
        let zero = DVector::zeros(1);
        assert_eq!(fisher_rao_equal_cov(&zero, &zero, &i1).unwrap(), 0.0);
        let two = DVector::from_column_slice(&[2.0]);
        let d = fisher_rao_equal_cov(&zero, &two, &i1).unwrap();
        assert_relative_eq!(d, SQRT_2 * 2f64.acosh(), epsilon = 1e-14);
        assert_relative_eq!(d, 1.862460, epsilon = 1e-6);
    }

    #[test]
    fn bhattacharyya_examples() {
        let p = gauss(&[0.5, 1.0], &[2.0, 0.3, 0.3, 1.0]);
        assert_relative_eq!(bhattacharyya(&p, &p).unwrap(), 0.0, epsilon = 1e-14);
        // d_M = 2 under identity covariance
        let a = gauss(&[0.0, 0.0], &[1.0, 0.0, 0.0, 1.0]);
        let b = gauss(&[2.0, 0.0], &[1.0, 0.0, 0.0, 1.0]);
        assert_relative_eq!(bhattacharyya(&a, &b).unwrap(), 0.5, epsilon = 1e-14);
        let wide = gauss(&[0.0], &[4.0]);
        let unit = gauss(&[0.0], &[1.0]);
        let d = bhattacharyya(&wide, &unit).unwrap();
        assert_relative_eq!(d, 0.5 * (2.5f64 / 2.0).ln(), epsilon = 1e-14);
        assert_relative_eq!(d, 0.111572, epsilon = 1e-6);
    }

    #[test]
    fn spectral_bhattacharyya_matches_closed_form() {
        let a = SpdMatrix::from_diagonal(&[4.0]).unwrap();
        let b = SpdMatrix::identity(1);
        assert_relative_eq!(
            bhattacharyya_zero_mean_spectral(&a, &b).unwrap(),
            0.5 * (1.25f64).ln(),
            epsilon = 1e-14
        );
        let a = gauss(&[0.0, 0.0], &[2.0, 0.7, 0.7, 1.5]);
        let b = gauss(&[0.0, 0.0], &[0.6, -0.2, -0.2, 0.9]);
        assert_relative_eq!(
            bhattacharyya_zero_mean_spectral(a.covariance(), b.covariance()).unwrap(),
            bhattacharyya(&a, &b).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn hellinger_examples() {
        let p = gauss(&[0.5], &[2.0]);
        assert_eq!(hellinger(&p, &p).unwrap(), 0.0);
        assert_relative_eq!(hellinger_from_bhattacharyya(0.5), 0.627271, epsilon = 1e-6);
        let far = gauss(&[1e3], &[1.0]);
        let h = hellinger(&gauss(&[0.0], &[1.0]), &far).unwrap();
        assert!(h < 1.0 && h > 0.99);
    }

    #[test]
    fn bhattacharyya_mean_gradient_closed_form() {
        let v = [0.7, -1.1];
        let p = gauss(&v, &[1.0, 0.0, 0.0, 1.0]);
        let q = gauss(&[0.0, 0.0], &[1.0, 0.0, 0.0, 1.0]);
        let g = distance_gradient(DistanceKind::Bhattacharyya, &p, &q).unwrap();
        assert_relative_eq!(g.mean_p[0], v[0] / 4.0, epsilon = 1e-14);
        assert_relative_eq!(g.mean_p[1], v[1] / 4.0, epsilon = 1e-14);
        let same = distance_gradient(DistanceKind::Bhattacharyya, &q, &q).unwrap();
        assert_eq!(same.mean_p.norm(), 0.0);
    }

    #[test]
    fn degenerate_pairs_report_errors() {
        let p = gauss(&[0.5, 1.0], &[2.0, 0.3, 0.3, 1.0]);
        for kind in [
            DistanceKind::FisherRaoCalvoOller,
            DistanceKind::FisherRaoZeroMean,
            DistanceKind::Hellinger,
        ] {
            assert!(matches!(
                distance_gradient(kind, &p, &p),
                Err(Error::DegenerateDistance(_))
            ));
        }
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in DistanceKind::ALL {
            assert_eq!(kind.as_str().parse::<DistanceKind>().unwrap(), kind);
        }
        assert!("euclid".parse::<DistanceKind>().is_err());
    }
}
