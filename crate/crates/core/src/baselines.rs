//! PCA, LDA and AMA-Gauss baselines.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::linalg;
use crate::spd::{self, SpdMatrix};
use crate::stats::{self, ClassEnsemble, LabeledDataset};
use crate::trainer::{self, FilterBank, FilterObjective, TrainConfig, TrainLog};
use crate::{Error, Result};

/// Flips each column so its largest-magnitude entry is positive.
fn canonical_signs(f: &mut DMatrix<f64>) {
    for mut col in f.column_iter_mut() {
        let mut idx = 0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[idx].abs() {
                idx = i;
            }
        }
        if col[idx] < 0.0 {
            col.neg_mut();
        }
    }
}

fn count_weights(ens: &ClassEnsemble) -> Vec<f64> {
    let total = ens.total_count() as f64;
    ens.classes().iter().map(|c| c.count as f64 / total).collect()
}

fn weighted_mean(ens: &ClassEnsemble, w: &[f64]) -> DVector<f64> {
    ens.classes()
        .iter()
        .zip(w)
        .fold(DVector::zeros(ens.dim()), |acc, (c, &wi)| acc + &c.mean * wi)
}

/// Count-weighted within-class covariance `Σ_i w_i Φ_i`.
pub fn within_class_covariance(ens: &ClassEnsemble) -> DMatrix<f64> {
    let w = count_weights(ens);
    ens.classes()
        .iter()
        .zip(&w)
        .fold(DMatrix::zeros(ens.dim(), ens.dim()), |acc, (c, &wi)| acc + &c.covariance * wi)
}

/// Count-weighted between-class scatter `Σ_i w_i (γ_i - γ̄)(γ_i - γ̄)ᵀ`.
pub fn between_class_scatter(ens: &ClassEnsemble) -> DMatrix<f64> {
    let w = count_weights(ens);
    let mean = weighted_mean(ens, &w);
    let mut s = DMatrix::zeros(ens.dim(), ens.dim());
    for (c, &wi) in ens.classes().iter().zip(&w) {
        let d = &c.mean - &mean;
        linalg::add_outer(&mut s, wi, &d, &d);
    }
    s
}

/// Covariance of the pooled data: within plus between.
pub fn total_covariance(ens: &ClassEnsemble) -> DMatrix<f64> {
    within_class_covariance(ens) + between_class_scatter(ens)
}

/// Top-`m` eigenvectors of the pooled covariance, by descending eigenvalue.
pub fn pca(ens: &ClassEnsemble, m: usize) -> Result<FilterBank> {
    if m == 0 || m > ens.dim() {
        return Err(Error::InvalidArgument(format!("m = {m} must lie in 1..={}", ens.dim())));
    }
    let eig = SymmetricEigen::new(total_covariance(ens));
    let mut order: Vec<usize> = (0..ens.dim()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut f = DMatrix::from_fn(ens.dim(), m, |r, c| eig.eigenvectors[(r, order[c])]);
    canonical_signs(&mut f);
    FilterBank::from_unnormalized(&f)
}

/// Unweighted scatter `Σ_i (μ_i - μ̄)(μ_i - μ̄)ᵀ` about the mean of `means`.
pub fn scatter_about_mean(means: &[DVector<f64>]) -> DMatrix<f64> {
    let n = means.first().map_or(0, |m| m.len());
    let mean = means.iter().fold(DVector::zeros(n), |a, m| a + m) / means.len().max(1) as f64;
    let mut s = DMatrix::zeros(n, n);
    for m in means {
        let d = m - &mean;
        linalg::add_outer(&mut s, 1.0, &d, &d);
    }
    s
}

/// `½ Σ_i Σ_j d_M²(μ_i, μ_j; Σ)` over ordered pairs.
pub fn pairwise_mahalanobis_sum(means: &[DVector<f64>], sigma: &SpdMatrix) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..means.len() {
        for j in (i + 1)..means.len() {
            total += crate::distances::mahalanobis_sq(&means[i], &means[j], sigma)?;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone)]
pub struct LdaModel {
    pub filters: FilterBank,
    /// Shrunk within-class covariance.
    pub within_class_cov: SpdMatrix,
    pub between_scatter: DMatrix<f64>,
    /// `Tr((FᵀWF)⁻¹ FᵀBF)` at the returned filters.
    pub fisher_criterion: f64,
}

pub const DEFAULT_LDA_SHRINKAGE: f64 = 0.1;

/// Top-`m` generalized eigenvectors of (between scatter, shrunk within
/// covariance), normalized to unit length. Shrinkage blends toward `(tr W / n) I`.
pub fn lda(ens: &ClassEnsemble, m: usize, shrinkage: f64) -> Result<LdaModel> {
    let c = ens.num_classes();
    if m == 0 {
        return Err(Error::InvalidArgument("m must be positive".into()));
    }
    if m + 1 > c {
        return Err(Error::RankBound {
            requested: m,
            max: c.saturating_sub(1),
        });
    }
    if !(0.0..=1.0).contains(&shrinkage) {
        return Err(Error::InvalidArgument(format!("shrinkage {shrinkage} outside [0, 1]")));
    }
    let n = ens.dim();
    let w = within_class_covariance(ens);
    let target = w.trace() / n as f64;
    let shrunk = &w * (1.0 - shrinkage) + DMatrix::identity(n, n) * (shrinkage * target);
    let within = SpdMatrix::new(shrunk)?;
    let between = between_class_scatter(ens);
    let spectrum = spd::reduced_symmetric_eigen(&between, &within)?;
    let mut f = DMatrix::from_fn(n, m, |r, k| spectrum.eigenvectors[(r, n - 1 - k)]);
    canonical_signs(&mut f);
    let filters = FilterBank::from_unnormalized(&f)?;
    let fisher_criterion = fisher_criterion(filters.as_matrix(), &within, &between)?;
    Ok(LdaModel {
        filters,
        within_class_cov: within,
        between_scatter: between,
        fisher_criterion,
    })
}

/// `Tr((FᵀWF)⁻¹ FᵀBF)`.
pub fn fisher_criterion(f: &DMatrix<f64>, within: &SpdMatrix, between: &DMatrix<f64>) -> Result<f64> {
    let fw = SpdMatrix::new(f.tr_mul(&(within.as_matrix() * f)))?;
    let fb = f.tr_mul(&(between * f));
    let l = fw.cholesky_factor();
    let x = linalg::solve_lower_transpose(l, &linalg::solve_lower(l, &fb));
    Ok(x.trace())
}

/// Class-conditional response model `N(Fᵀγ_k, FᵀΦ_kF + σ²I)`.
#[derive(Debug, Clone)]
pub struct AmaGaussModel {
    pub filters: FilterBank,
    pub sigma2: f64,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<SpdMatrix>,
}

struct AmaObjective<'a> {
    data: &'a LabeledDataset,
    ens: ClassEnsemble,
    sigma2: f64,
}

impl AmaObjective<'_> {
    /// Mean log posterior of the true class, and its gradient in `F`.
    fn value_and_gradient(&self, f: &DMatrix<f64>, with_grad: bool) -> Result<(f64, DMatrix<f64>)> {
        let n = f.nrows();
        let m = f.ncols();
        let x = self.data.features();
        let labels = self.data.labels();
        let ns = labels.len();
        let c = self.ens.num_classes();
        let r = x * f;

        let mut loglik = DMatrix::zeros(ns, c);
        let mut whitened = Vec::with_capacity(c);
        let mut inverses = Vec::with_capacity(c);
        let mut xf = Vec::with_capacity(c);
        for (k, cls) in self.ens.classes().iter().enumerate() {
            let phi_f = &cls.covariance * f;
            let mut s = f.tr_mul(&phi_f);
            for i in 0..m {
                s[(i, i)] += self.sigma2;
            }
            let sigma = SpdMatrix::new(s)?;
            let mu = f.tr_mul(&cls.mean);
            let mut d = r.clone();
            for mut row in d.row_iter_mut() {
                row -= mu.transpose();
            }
            let inv = sigma.inverse();
            let b = &d * &inv;
            let half_log_det = 0.5 * sigma.log_det();
            for s in 0..ns {
                loglik[(s, k)] = -half_log_det - 0.5 * d.row(s).dot(&b.row(s));
            }
            whitened.push(b);
            inverses.push(inv);
            xf.push(phi_f);
        }

        let mut value = 0.0;
        // a_sk = (δ_{k,y_s} - w_sk) / N
        let mut a = DMatrix::zeros(ns, c);
        for s in 0..ns {
            let row = loglik.row(s);
            let top = row.max();
            let lse = top + row.iter().map(|l| (l - top).exp()).sum::<f64>().ln();
            value += loglik[(s, labels[s])] - lse;
            for k in 0..c {
                let w = (loglik[(s, k)] - lse).exp();
                a[(s, k)] = (if k == labels[s] { 1.0 } else { 0.0 } - w) / ns as f64;
            }
        }
        value /= ns as f64;
        if !with_grad {
            return Ok((value, DMatrix::zeros(n, m)));
        }

        let mut g_r = DMatrix::<f64>::zeros(ns, m);
        let mut grad = DMatrix::zeros(n, m);
        for (k, cls) in self.ens.classes().iter().enumerate() {
            let b = &whitened[k];
            let ak = a.column(k);
            let mut weighted = b.clone();
            for (s, mut row) in weighted.row_iter_mut().enumerate() {
                row *= ak[s];
            }
            g_r -= &weighted;
            let g_mu: DVector<f64> = weighted.row_sum().transpose();
            let g_sigma = (b.tr_mul(&weighted) - &inverses[k] * ak.sum()) * 0.5;
            grad.ger(1.0, &cls.mean, &g_mu, 1.0);
            grad.gemm(2.0, &xf[k], &g_sigma, 1.0);
        }
        grad.gemm_tr(1.0, x, &g_r, 1.0);
        Ok((value, grad))
    }
}

impl FilterObjective for AmaObjective<'_> {
    fn evaluate(&self, f: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        self.value_and_gradient(f, true)
    }
}

/// Mean log posterior of the correct class under the AMA-Gauss decoder with
/// flat prior. The training loss is its negation.
pub fn ama_gauss_objective(data: &LabeledDataset, filters: &DMatrix<f64>, sigma2: f64) -> Result<f64> {
    let obj = AmaObjective {
        data,
        ens: stats::estimate_class_statistics(data)?,
        sigma2,
    };
    Ok(obj.value_and_gradient(filters, false)?.0)
}

/// Gradient of [`ama_gauss_objective`] in the entries of `filters`.
pub fn ama_gauss_gradient(data: &LabeledDataset, filters: &DMatrix<f64>, sigma2: f64) -> Result<DMatrix<f64>> {
    let obj = AmaObjective {
        data,
        ens: stats::estimate_class_statistics(data)?,
        sigma2,
    };
    Ok(obj.value_and_gradient(filters, true)?.1)
}

/// Maximizes the mean log posterior of the correct class. Uses the trainer's
/// trivialization, tolerance, restarts and optional pairwise staging; the
/// log's objective column is the mean log posterior.
pub fn ama_gauss_fit(data: &LabeledDataset, cfg: &TrainConfig) -> Result<(AmaGaussModel, TrainLog)> {
    if !(cfg.sigma2 > 0.0) {
        return Err(Error::NonPositiveVariance(cfg.sigma2));
    }
    let ens = stats::estimate_class_statistics(data)?;
    let obj = AmaObjective {
        data,
        ens,
        sigma2: cfg.sigma2,
    };
    let (filters, log) = trainer::train(&obj, data.dim(), cfg)?;
    let fs = stats::project_statistics(&obj.ens, filters.as_matrix(), cfg.sigma2)?;
    Ok((
        AmaGaussModel {
            filters,
            sigma2: cfg.sigma2,
            means: fs.means,
            covariances: fs.covariances,
        },
        log,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::ClassMoments;
    use crate::DistanceKind;
    use approx::assert_relative_eq;

    fn ensemble(means: &[&[f64]], cov: &DMatrix<f64>) -> ClassEnsemble {
        let n = cov.nrows();
        ClassEnsemble::new(
            n,
            means
                .iter()
                .map(|m| ClassMoments::new(100, DVector::from_column_slice(m), cov.clone()).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn pca_on_diagonal_covariance() {
        let ens = ensemble(&[&[0.0, 0.0, 0.0]], &DMatrix::from_diagonal(&DVector::from_column_slice(&[2.0, 3.0, 1.0])));
        let f = pca(&ens, 2).unwrap();
        assert_relative_eq!(f.as_matrix()[(1, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(f.as_matrix()[(0, 1)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn lda_two_classes_points_along_the_gap() {
        let ens = ensemble(&[&[0.0, 0.0, 0.0], &[1.0, 2.0, -2.0]], &DMatrix::identity(3, 3));
        let model = lda(&ens, 1, 0.0).unwrap();
        let v = DVector::from_column_slice(&[1.0, 2.0, -2.0]) / 3.0;
        assert_relative_eq!(model.filters.as_matrix().column(0).dot(&v).abs(), 1.0, epsilon = 1e-10);
        assert!(matches!(lda(&ens, 2, 0.1), Err(Error::RankBound { requested: 2, max: 1 })));
    }

    #[test]
    fn lda_rejects_singular_within_without_shrinkage() {
        let cov = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 0.0]));
        let ens = ensemble(&[&[0.0, 0.0], &[1.0, 0.0]], &cov);
        assert!(matches!(lda(&ens, 1, 0.0), Err(Error::NotPositiveDefinite)));
        assert!(lda(&ens, 1, 0.1).is_ok());
    }

    #[test]
    fn single_class_ama_objective_is_zero() {
        let data = LabeledDataset::new(
            1,
            vec![0, 0, 0],
            DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 2.0, 2.0]),
        )
        .unwrap();
        let f = DMatrix::identity(2, 1);
        assert_eq!(ama_gauss_objective(&data, &f, 0.1).unwrap(), 0.0);
        assert_eq!(ama_gauss_gradient(&data, &f, 0.1).unwrap().norm(), 0.0);
    }

    #[test]
    fn separated_classes_have_near_zero_loss() {
        let data = LabeledDataset::new(
            2,
            vec![0, 0, 1, 1],
            DMatrix::from_row_slice(4, 1, &[-100.0, -101.0, 100.0, 101.0]),
        )
        .unwrap();
        let v = ama_gauss_objective(&data, &DMatrix::identity(1, 1), 0.01).unwrap();
        assert!(v > -1e-12 && v <= 0.0);
    }

    #[test]
    fn ama_fit_runs_and_improves() {
        let data = LabeledDataset::new(
            2,
            vec![0, 0, 0, 1, 1, 1],
            DMatrix::from_row_slice(6, 2, &[0.1, 0.0, -0.1, 1.0, 0.0, -1.0, 3.0, 0.5, 3.2, -0.5, 2.9, 0.0]),
        )
        .unwrap();
        let cfg = TrainConfig {
            restarts: 2,
            ..TrainConfig::new(DistanceKind::Bhattacharyya, 1)
        };
        let (model, log) = ama_gauss_fit(&data, &cfg).unwrap();
        assert!(model.filters.as_matrix()[(0, 0)].abs() > 0.9);
        let trace = log.trace(0, 0);
        assert!(trace.windows(2).all(|w| w[1] >= w[0]));
    }
}
