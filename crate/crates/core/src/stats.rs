//! Labeled datasets, per-class moments and their projection into feature space.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::distances::GaussianParams;
use crate::linalg;
use crate::spd::SpdMatrix;
use crate::{Error, Result};

/// Samples stored row-wise (`N × n`) with 0-based labels in `[0, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    classes: usize,
    labels: Vec<usize>,
    features: DMatrix<f64>,
}

impl LabeledDataset {
    pub fn new(classes: usize, labels: Vec<usize>, features: DMatrix<f64>) -> Result<Self> {
        if labels.len() != features.nrows() {
            return Err(Error::DimensionMismatch {
                expected: features.nrows(),
                found: labels.len(),
            });
        }
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(Error::LabelOutOfRange {
                label: label as i64,
                line: row + 1,
                classes,
            });
        }
        Ok(Self {
            classes,
            labels,
            features,
        })
    }

    /// Builds a dataset from `(label, sample)` rows. `n` is needed for the empty case.
    pub fn from_rows(classes: usize, n: usize, rows: &[(usize, DVector<f64>)]) -> Result<Self> {
        let mut features = DMatrix::zeros(rows.len(), n);
        for (r, (_, x)) in rows.iter().enumerate() {
            if x.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: x.len(),
                });
            }
            features.row_mut(r).tr_copy_from(x);
        }
        Self::new(classes, rows.iter().map(|(l, _)| *l).collect(), features)
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn sample(&self, i: usize) -> DVector<f64> {
        self.features.row(i).transpose()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Projected copy with features `Fᵀx`.
    pub fn project(&self, filters: &DMatrix<f64>) -> Result<Self> {
        if filters.nrows() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: filters.nrows(),
            });
        }
        Ok(Self {
            classes: self.classes,
            labels: self.labels.clone(),
            features: &self.features * filters,
        })
    }

    /// Reads the CSV schema `label,x0,...,x{n-1}`. The class count is the
    /// largest label plus one, and every label below it must occur.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(File::open(path)?)
    }

    pub fn read_csv(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.get(0) != Some("label") {
            return Err(Error::Parse {
                line: 1,
                message: "header must start with `label`".into(),
            });
        }
        let n = header.len() - 1;
        let mut labels = Vec::new();
        let mut values = Vec::new();
        let mut max_label = None;
        for (idx, record) in rdr.records().enumerate() {
            let line = idx + 2;
            let record = record?;
            if record.len() != n + 1 {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {} fields, found {}", n + 1, record.len()),
                });
            }
            let label: i64 = record[0].parse().map_err(|_| Error::Parse {
                line,
                message: format!("label `{}` is not an integer", &record[0]),
            })?;
            if label < 0 {
                return Err(Error::LabelOutOfRange {
                    label,
                    line,
                    classes: 0,
                });
            }
            for (k, field) in record.iter().skip(1).enumerate() {
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("field x{k} = `{field}` is not a number"),
                })?;
                values.push(v);
            }
            max_label = max_label.max(Some(label as usize));
            labels.push(label as usize);
        }
        let classes = max_label.map_or(0, |m| m + 1);
        let mut seen = vec![false; classes];
        for &l in &labels {
            seen[l] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::EmptyClass(missing));
        }
        let features = DMatrix::from_row_slice(labels.len(), n, &values);
        Self::new(classes, labels, features)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(File::create(path)?)
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["label".to_string()];
        header.extend((0..self.dim()).map(|k| format!("x{k}")));
        w.write_record(&header)?;
        for (r, &label) in self.labels.iter().enumerate() {
            let mut row = vec![label.to_string()];
            // `{:?}` prints the shortest string that parses back to the same bits
            row.extend(self.features.row(r).iter().map(|v| format!("{v:?}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Moments of one class in data space. Covariances use `1/N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMoments {
    pub count: usize,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// `Φ + γγᵀ`
    pub second_moment: DMatrix<f64>,
}

impl ClassMoments {
    pub fn new(count: usize, mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if covariance.shape() != (n, n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: covariance.nrows(),
            });
        }
        let covariance = linalg::symmetrize(&covariance);
        let mut second_moment = covariance.clone();
        linalg::add_outer(&mut second_moment, 1.0, &mean, &mean);
        Ok(Self {
            count,
            mean,
            covariance,
            second_moment,
        })
    }
}

/// Per-class moments `(N_i, γ_i, Φ_i, M_i)` of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEnsemble {
    dim: usize,
    classes: Vec<ClassMoments>,
}

impl ClassEnsemble {
    pub fn new(dim: usize, classes: Vec<ClassMoments>) -> Result<Self> {
        for c in &classes {
            if c.mean.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: c.mean.len(),
                });
            }
        }
        Ok(Self { dim, classes })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[ClassMoments] {
        &self.classes
    }

    pub fn total_count(&self) -> usize {
        self.classes.iter().map(|c| c.count).sum()
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = File::create(path)?;
        serde_json::to_writer(&mut f, &StatsFile::from(self))?;
        f.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&StatsFile::from(self))?)
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let file: StatsFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        file.into_ensemble()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<StatsFile>(s)?.into_ensemble()
    }
}

#[derive(Serialize, Deserialize)]
struct StatsFile {
    n: usize,
    classes: Vec<StatsClass>,
}

#[derive(Serialize, Deserialize)]
struct StatsClass {
    label: usize,
    count: usize,
    mean: Vec<f64>,
    covariance: Vec<Vec<f64>>,
}

impl From<&ClassEnsemble> for StatsFile {
    fn from(ens: &ClassEnsemble) -> Self {
        let classes = ens
            .classes
            .iter()
            .enumerate()
            .map(|(label, c)| StatsClass {
                label,
                count: c.count,
                mean: c.mean.iter().copied().collect(),
                covariance: matrix_rows(&c.covariance),
            })
            .collect();
        StatsFile { n: ens.dim, classes }
    }
}

impl StatsFile {
    fn into_ensemble(mut self) -> Result<ClassEnsemble> {
        self.classes.sort_by_key(|c| c.label);
        let mut classes = Vec::with_capacity(self.classes.len());
        for (i, c) in self.classes.into_iter().enumerate() {
            if c.label != i {
                return Err(Error::InvalidArgument(format!(
                    "class labels must be 0..c without gaps, missing {i}"
                )));
            }
            let cov = matrix_from_rows(&c.covariance, self.n)?;
            classes.push(ClassMoments::new(c.count, DVector::from_vec(c.mean), cov)?);
        }
        ClassEnsemble::new(self.n, classes)
    }
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>> {
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch {
            expected: ncols,
            found: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Sample mean and `1/N` covariance of each class, in two passes.
pub fn estimate_class_statistics(data: &LabeledDataset) -> Result<ClassEnsemble> {
    let n = data.dim();
    let c = data.num_classes();
    let counts = data.class_counts();
    for (i, &k) in counts.iter().enumerate() {
        match k {
            0 => return Err(Error::EmptyClass(i)),
            1 => return Err(Error::SingleSampleClass(i)),
            _ => {}
        }
    }
    let x = data.features();
    let mut sums = vec![DVector::<f64>::zeros(n); c];
    for (r, &l) in data.labels().iter().enumerate() {
        sums[l] += x.row(r).transpose();
    }
    let means: Vec<DVector<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &k)| s / k as f64)
        .collect();
    let mut scatter = vec![DMatrix::<f64>::zeros(n, n); c];
    for (r, &l) in data.labels().iter().enumerate() {
        let d = x.row(r).transpose() - &means[l];
        linalg::add_outer(&mut scatter[l], 1.0, &d, &d);
    }
    let classes = means
        .into_iter()
        .zip(scatter)
        .zip(&counts)
        .map(|((mean, s), &k)| ClassMoments::new(k, mean, s / k as f64))
        .collect::<Result<Vec<_>>>()?;
    ClassEnsemble::new(n, classes)
}

/// Class statistics of `z = Fᵀx` with ridge `σ²`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub sigma2: f64,
    pub means: Vec<DVector<f64>>,
    /// `FᵀΦF + σ²I`
    pub covariances: Vec<SpdMatrix>,
    /// `FᵀMF + σ²I`
    pub second_moments: Vec<SpdMatrix>,
}

impl FeatureStats {
    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, |m| m.len())
    }

    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    /// `(μ_i, Σ_i)` for each class.
    pub fn gaussians(&self) -> Vec<GaussianParams> {
        self.means
            .iter()
            .zip(&self.covariances)
            .map(|(m, s)| GaussianParams::new(m.clone(), s.clone()).expect("consistent dims"))
            .collect()
    }

    /// `(0, Ψ_i)` for each class.
    pub fn zero_mean_second_moments(&self) -> Vec<GaussianParams> {
        self.second_moments
            .iter()
            .map(|s| GaussianParams::zero_mean(s.clone()))
            .collect()
    }
}

/// `μ_i = Fᵀγ_i`, `Σ_i = FᵀΦ_iF + σ²I`, `Ψ_i = FᵀM_iF + σ²I`.
pub fn project_statistics(ens: &ClassEnsemble, filters: &DMatrix<f64>, sigma2: f64) -> Result<FeatureStats> {
    if filters.nrows() != ens.dim() {
        return Err(Error::DimensionMismatch {
            expected: ens.dim(),
            found: filters.nrows(),
        });
    }
    if !(sigma2 >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma2 must be nonnegative, got {sigma2}")));
    }
    let m = filters.ncols();
    let ridge = DMatrix::<f64>::identity(m, m) * sigma2;
    let ft = filters.transpose();
    let mut out = FeatureStats {
        sigma2,
        means: Vec::with_capacity(ens.num_classes()),
        covariances: Vec::with_capacity(ens.num_classes()),
        second_moments: Vec::with_capacity(ens.num_classes()),
    };
    for c in ens.classes() {
        out.means.push(&ft * &c.mean);
        out.covariances
            .push(SpdMatrix::new(&ft * &c.covariance * filters + &ridge)?);
        out.second_moments
            .push(SpdMatrix::new(&ft * &c.second_moment * filters + &ridge)?);
    }
    Ok(out)
}
