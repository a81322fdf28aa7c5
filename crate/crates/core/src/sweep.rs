//! Validation tables: Bayes accuracy against distance, and Calvo-Oller gaps.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::distances::{self, GaussianParams};
use crate::evaluation::{self, BayesEstimate};
use crate::spd::SpdMatrix;
use crate::stats::{self, ClassEnsemble};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepName {
    Bayes1d,
    Bayes2d,
    CoGapEqualcov,
    CoGapDataset,
}

impl SweepName {
    pub const ALL: [SweepName; 4] = [
        SweepName::Bayes1d,
        SweepName::Bayes2d,
        SweepName::CoGapEqualcov,
        SweepName::CoGapDataset,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SweepName::Bayes1d => "bayes1d",
            SweepName::Bayes2d => "bayes2d",
            SweepName::CoGapEqualcov => "co_gap_equalcov",
            SweepName::CoGapDataset => "co_gap_dataset",
        }
    }
}

impl fmt::Display for SweepName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SweepName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::UnknownSweep(s.to_string()))
    }
}

/// A numeric table with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| format!("{v:?}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub samples_per_class: usize,
    pub seed: u64,
    /// Ridge added to data-space covariances in `co_gap_dataset`.
    pub sigma2: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            samples_per_class: 100_000,
            seed: 0,
            sigma2: 0.0,
        }
    }
}

/// Grid `start, start + step, ..., end` (inclusive).
fn grid(start: f64, end: f64, step: f64) -> Vec<f64> {
    let count = ((end - start) / step).round() as usize;
    (0..=count).map(|i| start + i as f64 * step).collect()
}

fn diag_gaussian(vars: &[f64]) -> GaussianParams {
    GaussianParams::zero_mean(SpdMatrix::from_diagonal(vars).expect("positive variances"))
}

/// Runs the named sweep. `co_gap_dataset` needs `ens`.
pub fn sweep_grid(name: SweepName, opts: &SweepOptions, ens: Option<&ClassEnsemble>) -> Result<Table> {
    match name {
        SweepName::Bayes1d => bayes1d(opts),
        SweepName::Bayes2d => bayes2d(opts),
        SweepName::CoGapEqualcov => co_gap_equalcov(),
        SweepName::CoGapDataset => {
            let ens = ens.ok_or_else(|| Error::InvalidArgument("co_gap_dataset needs class statistics".into()))?;
            co_gap_dataset(ens, opts.sigma2)
        }
    }
}

/// `N(0, 1)` against `N(0, σ²)` for `log₁₀ σ²` in `[-2, 2]`.
pub fn bayes1d(opts: &SweepOptions) -> Result<Table> {
    let mut t = Table::new(&["log10_sigma2", "closed_form_accuracy", "mc_accuracy", "log_odds", "d_fr"]);
    for (i, l) in grid(-2.0, 2.0, 0.25).into_iter().enumerate() {
        let s2 = 10f64.powf(l);
        let (a, b) = (diag_gaussian(&[1.0]), diag_gaussian(&[s2]));
        let mc = evaluation::monte_carlo_bayes(&[a.clone(), b.clone()], opts.samples_per_class, opts.seed + i as u64)?;
        let d_fr = distances::fisher_rao_zero_mean(a.covariance(), b.covariance())?;
        t.rows.push(vec![l, evaluation::bayes_1d_closed_form(s2)?, mc.accuracy, mc.log_odds, d_fr]);
    }
    Ok(t)
}

/// `N(0, I)` against `N(0, diag(σ₁², σ₂²))` over a grid of both variances.
pub fn bayes2d(opts: &SweepOptions) -> Result<Table> {
    let mut t = Table::new(&[
        "log10_sigma2_1",
        "log10_sigma2_2",
        "mc_accuracy",
        "log_odds",
        "d_fr",
        "d_b",
        "d_h",
    ]);
    let axis = grid(-2.0, 2.0, 0.5);
    let mut idx = 0;
    for &l1 in &axis {
        for &l2 in &axis {
            let (a, b) = (diag_gaussian(&[1.0, 1.0]), diag_gaussian(&[10f64.powf(l1), 10f64.powf(l2)]));
            let mc: BayesEstimate =
                evaluation::monte_carlo_bayes(&[a.clone(), b.clone()], opts.samples_per_class, opts.seed + idx)?;
            idx += 1;
            t.rows.push(vec![
                l1,
                l2,
                mc.accuracy,
                mc.log_odds,
                distances::fisher_rao_zero_mean(a.covariance(), b.covariance())?,
                distances::bhattacharyya(&a, &b)?,
                distances::hellinger(&a, &b)?,
            ]);
        }
    }
    Ok(t)
}

/// Exact equal-covariance Fisher-Rao distance against the Calvo-Oller bound
/// for Mahalanobis distance `d_M` in `[0, 20]`.
pub fn co_gap_equalcov() -> Result<Table> {
    let mut t = Table::new(&["d_m", "exact_fr", "calvo_oller"]);
    let unit = SpdMatrix::identity(1);
    let zero = DVector::zeros(1);
    for d in grid(0.0, 20.0, 0.5) {
        let mu = DVector::from_element(1, d);
        let exact = distances::fisher_rao_equal_cov(&zero, &mu, &unit)?;
        let bound = distances::calvo_oller_distance(
            &GaussianParams::new(zero.clone(), unit.clone())?,
            &GaussianParams::new(mu, unit.clone())?,
        )?;
        t.rows.push(vec![d, exact, bound]);
    }
    Ok(t)
}

fn nearly_equal(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0))
}

/// Per class pair: Calvo-Oller bound and, where a closed form exists (equal
/// means or equal covariances), the exact Fisher-Rao distance; `NaN` otherwise.
pub fn co_gap_dataset(ens: &ClassEnsemble, sigma2: f64) -> Result<Table> {
    let fs = stats::project_statistics(ens, &DMatrix::identity(ens.dim(), ens.dim()), sigma2)?;
    let g = fs.gaussians();
    let mut t = Table::new(&["class_i", "class_j", "calvo_oller", "exact_fr"]);
    for i in 0..g.len() {
        for j in (i + 1)..g.len() {
            let bound = distances::calvo_oller_distance(&g[i], &g[j])?;
            let same_mean = nearly_equal(g[i].mean().as_slice(), g[j].mean().as_slice());
            let same_cov = nearly_equal(
                g[i].covariance().as_matrix().as_slice(),
                g[j].covariance().as_matrix().as_slice(),
            );
            let exact = if same_mean {
                distances::fisher_rao_zero_mean(g[i].covariance(), g[j].covariance())?
            } else if same_cov {
                distances::fisher_rao_equal_cov(g[i].mean(), g[j].mean(), g[i].covariance())?
            } else {
                f64::NAN
            };
            t.rows.push(vec![i as f64, j as f64, bound, exact]);
        }
    }
    Ok(t)
}
