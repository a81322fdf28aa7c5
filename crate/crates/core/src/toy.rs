//! Synthetic Gaussian class problems with known discriminative subspaces.
//!
//! | name | classes | dims | structure |
//! |------|---------|------|-----------|
//! | `toy6d` | 3 | 6 | dims 0-1: covariances `R(kπ/3) diag(9, 1) R(kπ/3)ᵀ`, zero means; dims 2-3: means on a circle of radius 0.5, covariance `I`; dims 4-5: shared covariance `16 I` |
//! | `toy4d` | 3 | 4 | dims 0-1: means on a circle of radius 2, covariance `I`; dims 2-3: covariances `R(kπ/3) diag(9, 1) R(kπ/3)ᵀ`, zero means |
//! | `covcode` | 8 | 30 | zero means; dims 0-1: `R(kπ/8) diag(9, 0.1) R(kπ/8)ᵀ + 0.5 I`; dims 2-5: shared variance 8; remaining dims: variance 0.5 |
//!
//! Classes are sampled in order, `samples_per_class` rows each.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distances::GaussianParams;
use crate::evaluation::sample_gaussian;
use crate::linalg;
use crate::spd::SpdMatrix;
use crate::stats::LabeledDataset;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToyName {
    Toy6d,
    Toy4d,
    Covcode,
}

impl ToyName {
    pub const ALL: [ToyName; 3] = [ToyName::Toy6d, ToyName::Toy4d, ToyName::Covcode];

    pub fn as_str(self) -> &'static str {
        match self {
            ToyName::Toy6d => "toy6d",
            ToyName::Toy4d => "toy4d",
            ToyName::Covcode => "covcode",
        }
    }
}

impl fmt::Display for ToyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ToyName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ToyName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::UnknownSpec(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToySpec {
    pub name: ToyName,
    pub samples_per_class: usize,
    pub seed: u64,
}

/// A named coordinate subspace of the data space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subspace {
    pub role: String,
    pub dims: Vec<usize>,
}

impl Subspace {
    fn new(role: &str, dims: &[usize]) -> Self {
        Self {
            role: role.to_string(),
            dims: dims.to_vec(),
        }
    }

    /// Coordinate basis, `n × dims.len()`.
    pub fn basis(&self, n: usize) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(n, self.dims.len());
        for (k, &d) in self.dims.iter().enumerate() {
            b[(d, k)] = 1.0;
        }
        b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub name: ToyName,
    pub n: usize,
    pub classes: usize,
    pub subspaces: Vec<Subspace>,
}

impl GroundTruth {
    pub fn subspace(&self, role: &str) -> Option<&Subspace> {
        self.subspaces.iter().find(|s| s.role == role)
    }
}

/// True class parameters of a toy problem.
#[derive(Debug, Clone)]
pub struct ToyModel {
    pub classes: Vec<GaussianParams>,
    pub truth: GroundTruth,
}

pub const COVCODE_CLASSES: usize = 8;
pub const COVCODE_DIM: usize = 30;

fn rotation(theta: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

/// `R(θ) diag(a, b) R(θ)ᵀ`
fn rotated_template(theta: f64, a: f64, b: f64) -> DMatrix<f64> {
    let r = rotation(theta);
    &r * DMatrix::from_diagonal(&DVector::from_column_slice(&[a, b])) * r.transpose()
}

fn on_circle(radius: f64, k: usize, count: usize) -> [f64; 2] {
    let t = 2.0 * PI * k as f64 / count as f64;
    [radius * t.cos(), radius * t.sin()]
}

fn gaussian(mean: DVector<f64>, cov: DMatrix<f64>) -> GaussianParams {
    GaussianParams::new(mean, SpdMatrix::new(cov).expect("toy covariance is SPD")).expect("toy dims agree")
}

impl ToyModel {
    pub fn new(name: ToyName) -> Self {
        match name {
            ToyName::Toy6d => toy6d(),
            ToyName::Toy4d => toy4d(),
            ToyName::Covcode => covcode(),
        }
    }

    pub fn dim(&self) -> usize {
        self.truth.n
    }
}

fn toy6d() -> ToyModel {
    let classes = (0..3)
        .map(|k| {
            let mut cov = DMatrix::zeros(6, 6);
            cov.view_mut((0, 0), (2, 2))
                .copy_from(&rotated_template(k as f64 * PI / 3.0, 9.0, 1.0));
            cov[(2, 2)] = 1.0;
            cov[(3, 3)] = 1.0;
            cov[(4, 4)] = 16.0;
            cov[(5, 5)] = 16.0;
            let [a, b] = on_circle(0.5, k, 3);
            gaussian(DVector::from_column_slice(&[0.0, 0.0, a, b, 0.0, 0.0]), cov)
        })
        .collect();
    ToyModel {
        classes,
        truth: GroundTruth {
            name: ToyName::Toy6d,
            n: 6,
            classes: 3,
            subspaces: vec![
                Subspace::new("covariance", &[0, 1]),
                Subspace::new("means", &[2, 3]),
                Subspace::new("variance", &[4, 5]),
            ],
        },
    }
}

fn toy4d() -> ToyModel {
    let classes = (0..3)
        .map(|k| {
            let mut cov = DMatrix::zeros(4, 4);
            cov[(0, 0)] = 1.0;
            cov[(1, 1)] = 1.0;
            cov.view_mut((2, 2), (2, 2))
                .copy_from(&rotated_template(k as f64 * PI / 3.0, 9.0, 1.0));
            let [a, b] = on_circle(2.0, k, 3);
            gaussian(DVector::from_column_slice(&[a, b, 0.0, 0.0]), cov)
        })
        .collect();
    ToyModel {
        classes,
        truth: GroundTruth {
            name: ToyName::Toy4d,
            n: 4,
            classes: 3,
            subspaces: vec![Subspace::new("means", &[0, 1]), Subspace::new("covariance", &[2, 3])],
        },
    }
}

fn covcode() -> ToyModel {
    let (c, n) = (COVCODE_CLASSES, COVCODE_DIM);
    let classes = (0..c)
        .map(|k| {
            let mut cov = DMatrix::from_diagonal_element(n, n, 0.5);
            let plane = rotated_template(k as f64 * PI / c as f64, 9.0, 0.1);
            let mut block = cov.view_mut((0, 0), (2, 2));
            block += plane;
            for d in 2..6 {
                cov[(d, d)] = 8.0;
            }
            gaussian(DVector::zeros(n), cov)
        })
        .collect();
    ToyModel {
        classes,
        truth: GroundTruth {
            name: ToyName::Covcode,
            n,
            classes: c,
            subspaces: vec![
                Subspace::new("covariance", &[0, 1]),
                Subspace::new("variance", &[2, 3, 4, 5]),
            ],
        },
    }
}

/// Draws the dataset for `spec` along with its ground truth.
pub fn generate(spec: &ToySpec) -> Result<(LabeledDataset, GroundTruth)> {
    if spec.samples_per_class < 2 {
        return Err(Error::InvalidArgument(format!(
            "samples_per_class must be at least 2, got {}",
            spec.samples_per_class
        )));
    }
    let model = ToyModel::new(spec.name);
    Ok((sample_model(&model, spec.samples_per_class, spec.seed)?, model.truth))
}

/// `per_class` draws from each class of `model`, class by class.
pub fn sample_model(model: &ToyModel, per_class: usize, seed: u64) -> Result<LabeledDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.dim();
    let c = model.classes.len();
    let mut features = DMatrix::zeros(per_class * c, n);
    let mut labels = Vec::with_capacity(per_class * c);
    for (k, g) in model.classes.iter().enumerate() {
        let draws = sample_gaussian(g.mean(), g.covariance().as_matrix(), per_class, &mut rng);
        features.rows_mut(k * per_class, per_class).copy_from(&draws);
        labels.extend(std::iter::repeat_n(k, per_class));
    }
    LabeledDataset::new(c, labels, features)
}

/// Largest principal angle (radians) between the column spans of `a` and `b`.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let qa = linalg::orthonormal_columns(a);
    let qb = linalg::orthonormal_columns(b);
    let cross = qa.tr_mul(&qb);
    let sv = cross.singular_values();
    let k = a.ncols().min(b.ncols());
    let smallest = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if k == 0 {
        return 0.0;
    }
    smallest.clamp(-1.0, 1.0).acos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spd;

    #[test]
    fn shapes_and_determinism() {
        let spec = ToySpec {
            name: ToyName::Toy6d,
            samples_per_class: 500,
            seed: 1,
        };
        let (d, truth) = generate(&spec).unwrap();
        assert_eq!((d.dim(), d.num_classes(), d.len()), (6, 3, 1500));
        assert_eq!(truth.subspace("covariance").unwrap().dims, vec![0, 1]);
        let (again, _) = generate(&spec).unwrap();
        assert_eq!(d, again);
        assert!(matches!("toy9d".parse::<ToyName>(), Err(Error::UnknownSpec(_))));
    }

    #[test]
    fn toy6d_parameter_structure() {
        let model = ToyModel::new(ToyName::Toy6d);
        let base = &model.classes[0];
        for g in &model.classes[1..] {
            let dm = g.mean() - base.mean();
            let dc = g.covariance().as_matrix() - base.covariance().as_matrix();
            for i in 0..6 {
                // means differ only on dims 2-3
                if !(2..4).contains(&i) {
                    assert_eq!(dm[i], 0.0);
                }
                for j in 0..6 {
                    if i >= 2 || j >= 2 {
                        assert_eq!(dc[(i, j)], 0.0);
                    }
                }
            }
            assert!(dm.norm() > 0.1);
            assert!(dc.norm() > 1.0);
        }
        // dims 4-5 carry the largest marginal variance
        for g in &model.classes {
            let cov = g.covariance().as_matrix();
            for i in 0..4 {
                assert!(cov[(4, 4)] > cov[(i, i)] + 1.0);
            }
        }
    }

    #[test]
    fn toy4d_second_moments_separate_more_on_dims_2_3() {
        let model = ToyModel::new(ToyName::Toy4d);
        let psi: Vec<DMatrix<f64>> = model
            .classes
            .iter()
            .map(|g| g.covariance().as_matrix() + g.mean() * g.mean().transpose())
            .collect();
        let block = |m: &DMatrix<f64>, s: usize| SpdMatrix::new(m.view((s, s), (2, 2)).into_owned()).unwrap();
        for i in 0..3 {
            for j in (i + 1)..3 {
                let low = spd::affine_invariant_distance(&block(&psi[i], 0), &block(&psi[j], 0)).unwrap();
                let high = spd::affine_invariant_distance(&block(&psi[i], 2), &block(&psi[j], 2)).unwrap();
                assert!(high > low, "pair ({i},{j}): {high} vs {low}");
            }
        }
    }

    #[test]
    fn covcode_means_are_zero() {
        let model = ToyModel::new(ToyName::Covcode);
        assert_eq!(model.classes.len(), COVCODE_CLASSES);
        for g in &model.classes {
            assert_eq!(g.mean().norm(), 0.0);
            assert_eq!(g.dim(), COVCODE_DIM);
        }
    }

    #[test]
    fn principal_angles() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(3, 2, &[2.0, 1.0, 0.0, 3.0, 0.0, 0.0]);
        assert!(max_principal_angle(&a, &b) < 1e-7);
        let c = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!((max_principal_angle(&a, &c) - PI / 2.0).abs() < 1e-7);
        let t = 0.3_f64;
        let d = DMatrix::from_row_slice(3, 1, &[t.cos(), 0.0, t.sin()]);
        let e = DMatrix::from_row_slice(3, 1, &[1.0, 0.0, 0.0]);
        assert!((max_principal_angle(&d, &e) - t).abs() < 1e-7);
    }
}
