//! Classifiers on projected features and Bayes-error estimates.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::distances::GaussianParams;
use crate::linalg;
use crate::spd::SpdMatrix;
use crate::stats::LabeledDataset;
use crate::trainer::FilterBank;
use crate::{Error, Result};

/// Gaussian class-conditional model with count-proportional priors.
#[derive(Debug, Clone)]
pub struct QdaModel {
    priors: Vec<f64>,
    means: Vec<DVector<f64>>,
    covariances: Vec<SpdMatrix>,
    log_dets: Vec<f64>,
}

impl QdaModel {
    pub fn new(priors: Vec<f64>, classes: Vec<GaussianParams>) -> Result<Self> {
        if priors.len() != classes.len() || classes.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "{} priors for {} classes",
                priors.len(),
                classes.len()
            )));
        }
        let total: f64 = priors.iter().sum();
        if priors.iter().any(|&p| !(p >= 0.0)) || !(total > 0.0) {
            return Err(Error::InvalidArgument("priors must be nonnegative with a positive sum".into()));
        }
        let priors = priors.iter().map(|p| p / total).collect();
        let (means, covariances): (Vec<_>, Vec<_>) = classes
            .into_iter()
            .map(|g| (g.mean().clone(), g.covariance().clone()))
            .unzip();
        let log_dets = covariances.iter().map(|c| c.log_det()).collect();
        Ok(Self {
            priors,
            means,
            covariances,
            log_dets,
        })
    }

    /// Equal priors over `classes`.
    pub fn with_flat_prior(classes: Vec<GaussianParams>) -> Result<Self> {
        Self::new(vec![1.0; classes.len()], classes)
    }

    pub fn num_classes(&self) -> usize {
        self.priors.len()
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[SpdMatrix] {
        &self.covariances
    }

    /// `log π_i - ½ log det Σ_i - ½ (z - μ_i)ᵀ Σ_i⁻¹ (z - μ_i)` per class.
    pub fn scores(&self, z: &DVector<f64>) -> Vec<f64> {
        (0..self.num_classes())
            .map(|i| {
                let q = self.covariances[i].inverse_quadratic_form(&(z - &self.means[i]));
                self.priors[i].ln() - 0.5 * self.log_dets[i] - 0.5 * q
            })
            .collect()
    }

    /// Class with the highest score; ties go to the lowest index.
    pub fn predict_features(&self, z: &DVector<f64>) -> usize {
        argmax_first(&self.scores(z))
    }
}

fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in v.iter().enumerate() {
        if s > v[best] {
            best = i;
        }
    }
    best
}

/// Per-class moments of `Fᵀx` over `train` (`1/N` covariance), plus `ridge · I`.
pub fn qda_fit(train: &LabeledDataset, filters: &FilterBank, ridge: f64) -> Result<QdaModel> {
    if !(ridge >= 0.0) {
        return Err(Error::InvalidArgument(format!("ridge must be nonnegative, got {ridge}")));
    }
    let z = train.project(filters.as_matrix())?;
    let m = filters.m();
    let counts = z.class_counts();
    if let Some(empty) = counts.iter().position(|&k| k == 0) {
        return Err(Error::EmptyClass(empty));
    }
    let c = z.num_classes();
    let mut sums = vec![DVector::<f64>::zeros(m); c];
    for (r, &l) in z.labels().iter().enumerate() {
        sums[l] += z.features().row(r).transpose();
    }
    let means: Vec<_> = sums.into_iter().zip(&counts).map(|(s, &k)| s / k as f64).collect();
    let mut scatter = vec![DMatrix::<f64>::zeros(m, m); c];
    for (r, &l) in z.labels().iter().enumerate() {
        let d = z.features().row(r).transpose() - &means[l];
        linalg::add_outer(&mut scatter[l], 1.0, &d, &d);
    }
    let mut classes = Vec::with_capacity(c);
    for ((mean, s), &k) in means.into_iter().zip(scatter).zip(&counts) {
        let cov = s / k as f64 + DMatrix::identity(m, m) * ridge;
        classes.push(GaussianParams::new(mean, SpdMatrix::new(cov)?)?);
    }
    QdaModel::new(counts.iter().map(|&k| k as f64).collect(), classes)
}

pub fn qda_predict(model: &QdaModel, x: &DVector<f64>, filters: &FilterBank) -> usize {
    model.predict_features(&filters.as_matrix().tr_mul(x))
}

/// Accuracy and confusion counts (rows true, columns predicted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classifier: String,
    pub accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
    pub n_test: usize,
    pub seed: u64,
}

impl EvalReport {
    pub fn from_predictions(classifier: &str, classes: usize, truth: &[usize], predicted: &[usize], seed: u64) -> Self {
        let mut confusion = vec![vec![0; classes]; classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            confusion[t][p] += 1;
        }
        let correct: usize = (0..classes).map(|i| confusion[i][i]).sum();
        let n_test = truth.len();
        Self {
            classifier: classifier.to_string(),
            accuracy: if n_test == 0 { 0.0 } else { correct as f64 / n_test as f64 },
            confusion,
            n_test,
            seed,
        }
    }
}

pub fn qda_evaluate(model: &QdaModel, test: &LabeledDataset, filters: &FilterBank) -> Result<EvalReport> {
    let z = test.project(filters.as_matrix())?;
    let predicted: Vec<usize> = (0..z.len()).map(|r| model.predict_features(&z.sample(r))).collect();
    let classes = model.num_classes().max(test.num_classes());
    Ok(EvalReport::from_predictions("qda", classes, test.labels(), &predicted, 0))
}

/// Majority vote among the `k` nearest training features (Euclidean).
/// Distance ties keep training order; vote ties go to the tied label whose
/// first neighbor ranks nearest.
pub fn knn_predict(train: &LabeledDataset, test: &LabeledDataset, filters: &FilterBank, k: usize) -> Result<EvalReport> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if train.len() < k {
        return Err(Error::TrainSmallerThanK { train: train.len(), k });
    }
    let zt = train.project(filters.as_matrix())?;
    let zq = test.project(filters.as_matrix())?;
    let classes = train.num_classes().max(test.num_classes());
    let mut order: Vec<usize> = (0..zt.len()).collect();
    let mut dist = vec![0.0; zt.len()];
    let mut predicted = Vec::with_capacity(zq.len());
    for q in 0..zq.len() {
        let row = zq.features().row(q);
        for (t, d) in dist.iter_mut().enumerate() {
            *d = (zt.features().row(t) - row).norm_squared();
        }
        order.iter_mut().enumerate().for_each(|(i, o)| *o = i);
        order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]));
        predicted.push(vote(order[..k].iter().map(|&i| zt.labels()[i]), classes));
    }
    Ok(EvalReport::from_predictions(
        &format!("knn{k}"),
        classes,
        test.labels(),
        &predicted,
        0,
    ))
}

fn vote(ranked: impl Iterator<Item = usize>, classes: usize) -> usize {
    let ranked: Vec<usize> = ranked.collect();
    let mut counts = vec![0usize; classes];
    for &l in &ranked {
        counts[l] += 1;
    }
    let top = counts.iter().copied().max().unwrap_or(0);
    ranked.into_iter().find(|&l| counts[l] == top).unwrap_or(0)
}

/// Draws `count` samples of `N(mean, cov)` as rows. `cov` may be singular.
pub(crate) fn sample_gaussian(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> DMatrix<f64> {
    let factor = linalg::psd_factor(cov);
    let n = mean.len();
    let mut out = DMatrix::zeros(count, n);
    let mut eps = DVector::zeros(n);
    for r in 0..count {
        eps.iter_mut().for_each(|e| *e = StandardNormal.sample(rng));
        let x = mean + &factor * &eps;
        out.row_mut(r).tr_copy_from(&x);
    }
    out
}

/// Bayes accuracy `a` and log-odds `ln(a / (1 - a))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesEstimate {
    pub accuracy: f64,
    /// `+∞` when no sample is misclassified.
    pub log_odds: f64,
}

impl BayesEstimate {
    pub fn from_accuracy(accuracy: f64) -> Self {
        let error = 1.0 - accuracy;
        let log_odds = if error <= 0.0 {
            f64::INFINITY
        } else {
            (accuracy / error).ln()
        };
        Self { accuracy, log_odds }
    }
}

/// Classifies `n_per_class` draws from each class by the true log-density
/// (equal priors).
pub fn monte_carlo_bayes(classes: &[GaussianParams], n_per_class: usize, seed: u64) -> Result<BayesEstimate> {
    if n_per_class == 0 {
        return Err(Error::InvalidArgument("n_per_class must be at least 1".into()));
    }
    let model = QdaModel::with_flat_prior(classes.to_vec())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut correct = 0usize;
    for (i, g) in classes.iter().enumerate() {
        let l = g.covariance().cholesky_factor();
        let m = g.dim();
        let mut eps = DVector::zeros(m);
        for _ in 0..n_per_class {
            eps.iter_mut().for_each(|e| *e = StandardNormal.sample(&mut rng));
            let z = g.mean() + l * &eps;
            if model.predict_features(&z) == i {
                correct += 1;
            }
        }
    }
    let total = (n_per_class * classes.len()) as f64;
    Ok(BayesEstimate::from_accuracy(correct as f64 / total))
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Bayes accuracy for `N(0, 1)` against `N(0, σ²)` with equal priors.
pub fn bayes_1d_closed_form(sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::NonPositiveVariance(sigma2));
    }
    if sigma2 == 1.0 {
        return Ok(0.5);
    }
    // swapping the classes maps σ² to 1/σ² and leaves the accuracy unchanged
    let s = if sigma2 < 1.0 { 1.0 / sigma2 } else { sigma2 };
    let t = (s.ln() / (1.0 - 1.0 / s)).sqrt();
    let inner = 2.0 * normal_cdf(t) - 1.0;
    let outer = 2.0 * (1.0 - normal_cdf(t / s.sqrt()));
    Ok(0.5 * (inner + outer))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Classifier {
    Qda { ridge: f64 },
    Knn { k: usize },
}

/// Trains `classifier` on `train` and scores it on `test`.
pub fn evaluate(classifier: Classifier, train: &LabeledDataset, test: &LabeledDataset, filters: &FilterBank) -> Result<EvalReport> {
    match classifier {
        Classifier::Qda { ridge } => qda_evaluate(&qda_fit(train, filters, ridge)?, test, filters),
        Classifier::Knn { k } => knn_predict(train, test, filters, k),
    }
}

/// Replaces every test class by Gaussian draws with its sample mean and
/// covariance (same counts, data space), then evaluates as [`evaluate`].
pub fn gaussian_resample_eval(
    train: &LabeledDataset,
    test: &LabeledDataset,
    filters: &FilterBank,
    classifier: Classifier,
    seed: u64,
) -> Result<EvalReport> {
    let resampled = gaussian_resample(test, seed)?;
    let mut report = evaluate(classifier, train, &resampled, filters)?;
    report.seed = seed;
    Ok(report)
}

/// Gaussian surrogate of `data`: per class, `N_i` draws from `N(γ_i, Φ_i)`, in
/// class order.
pub fn gaussian_resample(data: &LabeledDataset, seed: u64) -> Result<LabeledDataset> {
    let ens = crate::stats::estimate_class_statistics(data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = data.dim();
    let mut labels = Vec::with_capacity(data.len());
    let mut features = DMatrix::zeros(data.len(), n);
    let mut row = 0;
    for (i, c) in ens.classes().iter().enumerate() {
        let draws = sample_gaussian(&c.mean, &c.covariance, c.count, &mut rng);
        features.rows_mut(row, c.count).copy_from(&draws);
        labels.extend(std::iter::repeat_n(i, c.count));
        row += c.count;
    }
    LabeledDataset::new(data.num_classes(), labels, features)
}
