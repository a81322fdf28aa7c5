#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sqfa::stats::ClassMoments;
use sqfa::{ClassEnsemble, GaussianParams, SpdMatrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn normal_vector(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// `A Aᵀ / n + floor · I` with Gaussian `A`.
pub fn random_spd(rng: &mut impl Rng, n: usize, floor: f64) -> SpdMatrix {
    let a = normal_matrix(rng, n, n);
    let mut m = &a * a.transpose() / n as f64;
    for i in 0..n {
        m[(i, i)] += floor;
    }
    SpdMatrix::new(m).unwrap()
}

/// Well-conditioned invertible matrix: identity plus a scaled Gaussian.
pub fn random_invertible(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    loop {
        let g = DMatrix::identity(n, n) + normal_matrix(rng, n, n) * (0.5 / (n as f64).sqrt());
        if g.clone().svd(false, false).singular_values.min() > 0.2 {
            return g;
        }
    }
}

pub fn random_gaussian(rng: &mut impl Rng, n: usize) -> GaussianParams {
    GaussianParams::new(normal_vector(rng, n), random_spd(rng, n, 0.3)).unwrap()
}

/// Classes scattered around a shared covariance, so pairwise distances stay moderate.
pub fn random_ensemble(rng: &mut impl Rng, n: usize, c: usize) -> ClassEnsemble {
    let base = random_spd(rng, n, 0.5);
    let classes = (0..c)
        .map(|_| {
            let p = random_spd(rng, n, 0.1);
            let cov = base.as_matrix() + p.as_matrix() * 0.5;
            let mean = normal_vector(rng, n) * 0.5;
            ClassMoments::new(50 + rng.random_range(0..50), mean, cov).unwrap()
        })
        .collect();
    ClassEnsemble::new(n, classes).unwrap()
}

pub fn random_filters(rng: &mut impl Rng, n: usize, m: usize) -> DMatrix<f64> {
    let mut f = normal_matrix(rng, n, m);
    for mut col in f.column_iter_mut() {
        let norm = col.norm();
        col /= norm;
    }
    f
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1e-12)
}
