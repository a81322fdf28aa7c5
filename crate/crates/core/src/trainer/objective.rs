//! The pairwise objective `Σ_i Σ_j d(θ_i, θ_j)` and its gradient in `F`.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::distances::{self, DistanceKind, GaussianParams};
use crate::spd::SpdMatrix;
use crate::stats::ClassEnsemble;
use crate::{Error, Result};

use super::{FilterObjective, TrainConfig};

/// Per-class projected parameters plus the cached `X_i F`.
pub(crate) struct Projected {
    params: Vec<GaussianParams>,
    xf: Vec<DMatrix<f64>>,
}

pub(crate) struct PairwiseObjective<'a> {
    ens: &'a ClassEnsemble,
    kind: DistanceKind,
    sigma2: f64,
}

impl<'a> PairwiseObjective<'a> {
    pub fn new(ens: &'a ClassEnsemble, kind: DistanceKind, sigma2: f64) -> Self {
        Self { ens, kind, sigma2 }
    }

    fn moment(&self, i: usize) -> &'a DMatrix<f64> {
        let ens: &'a ClassEnsemble = self.ens;
        let c = &ens.classes()[i];
        if self.kind.uses_second_moments() {
            &c.second_moment
        } else {
            &c.covariance
        }
    }

    fn check(&self, f: &DMatrix<f64>) -> Result<()> {
        if f.nrows() != self.ens.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.ens.dim(),
                found: f.nrows(),
            });
        }
        Ok(())
    }

    pub fn project(&self, f: &DMatrix<f64>) -> Result<Projected> {
        self.check(f)?;
        let m = f.ncols();
        let c = self.ens.num_classes();
        let mut params = Vec::with_capacity(c);
        let mut xf = Vec::with_capacity(c);
        for i in 0..c {
            let x_f = self.moment(i) * f;
            let mut s = f.tr_mul(&x_f);
            for k in 0..m {
                s[(k, k)] += self.sigma2;
            }
            let mean = if self.kind.uses_second_moments() {
                DVector::zeros(m)
            } else {
                f.tr_mul(&self.ens.classes()[i].mean)
            };
            params.push(GaussianParams::new(mean, SpdMatrix::new(s)?)?);
            xf.push(x_f);
        }
        Ok(Projected { params, xf })
    }

    /// Ordered-pair sum and, when asked, per-class `(∂/∂μ_i, ∂/∂Σ_i)`.
    #[allow(clippy::type_complexity)]
    pub fn pairwise(
        &self,
        proj: &Projected,
        with_grad: bool,
    ) -> Result<(f64, Vec<(DVector<f64>, DMatrix<f64>)>)> {
        let c = proj.params.len();
        let m = proj.params.first().map_or(0, |p| p.dim());
        let mut grads = if with_grad {
            vec![(DVector::zeros(m), DMatrix::zeros(m, m)); c]
        } else {
            Vec::new()
        };
        let mut total = 0.0;
        for i in 0..c {
            for j in (i + 1)..c {
                let (p, q) = (&proj.params[i], &proj.params[j]);
                if !with_grad {
                    total += distances::distance(self.kind, p, q)?;
                    continue;
                }
                let (d, g) = distances::distance_with_gradient(self.kind, p, q)?;
                total += d;
                if let Some(g) = g {
                    grads[i].0 += &g.mean_p;
                    grads[i].1 += &g.cov_p;
                    grads[j].0 += &g.mean_q;
                    grads[j].1 += &g.cov_q;
                }
            }
        }
        // every unordered pair appears twice in the ordered sum
        for g in &mut grads {
            g.0 *= 2.0;
            g.1 *= 2.0;
        }
        Ok((2.0 * total, grads))
    }

    /// `Σ_i γ_i gμ_iᵀ + 2 X_i F GΣ_i`.
    pub fn backproject(&self, proj: &Projected, grads: &[(DVector<f64>, DMatrix<f64>)]) -> DMatrix<f64> {
        let n = self.ens.dim();
        let m = grads.first().map_or(0, |g| g.0.len());
        let mut out = DMatrix::zeros(n, m);
        for (i, (g_mu, g_sigma)) in grads.iter().enumerate() {
            if !self.kind.uses_second_moments() {
                out.ger(1.0, &self.ens.classes()[i].mean, g_mu, 1.0);
            }
            out.gemm(2.0, &proj.xf[i], g_sigma, 1.0);
        }
        out
    }

    pub fn value(&self, f: &DMatrix<f64>) -> Result<f64> {
        let proj = self.project(f)?;
        Ok(self.pairwise(&proj, false)?.0)
    }
}

impl FilterObjective for PairwiseObjective<'_> {
    fn evaluate(&self, f: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        let proj = self.project(f)?;
        let (v, grads) = self.pairwise(&proj, true)?;
        Ok((v, self.backproject(&proj, &grads)))
    }
}

/// `Σ_i Σ_j d(θ_i, θ_j)` over ordered class pairs, on statistics projected by
/// `filters` with ridge `cfg.sigma2`. The smSQFA kind compares second moments.
pub fn objective(filters: &DMatrix<f64>, ens: &ClassEnsemble, cfg: &TrainConfig) -> Result<f64> {
    PairwiseObjective::new(ens, cfg.kind, cfg.sigma2).value(filters)
}

/// Gradient of [`objective`] with respect to the entries of `filters`.
/// Coincident class pairs contribute nothing.
pub fn objective_gradient(filters: &DMatrix<f64>, ens: &ClassEnsemble, cfg: &TrainConfig) -> Result<DMatrix<f64>> {
    Ok(PairwiseObjective::new(ens, cfg.kind, cfg.sigma2).evaluate(filters)?.1)
}

/// Wall time of one value-and-gradient evaluation, split into the projection
/// part (`X_i F`, `FᵀX_iF` and the back-projection) and the pairwise part.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepProfile {
    pub projection: Duration,
    pub pairwise: Duration,
}

/// Averages [`StepProfile`] over `reps` evaluations at `filters`.
pub fn profile_step(filters: &DMatrix<f64>, ens: &ClassEnsemble, cfg: &TrainConfig, reps: usize) -> Result<StepProfile> {
    let obj = PairwiseObjective::new(ens, cfg.kind, cfg.sigma2);
    let mut out = StepProfile::default();
    for _ in 0..reps.max(1) {
        let t0 = Instant::now();
        let proj = obj.project(filters)?;
        let t1 = Instant::now();
        let (_, grads) = obj.pairwise(&proj, true)?;
        let t2 = Instant::now();
        std::hint::black_box(obj.backproject(&proj, &grads));
        let t3 = Instant::now();
        out.projection += (t1 - t0) + (t3 - t2);
        out.pairwise += t2 - t1;
    }
    let reps = reps.max(1) as u32;
    out.projection /= reps;
    out.pairwise /= reps;
    Ok(out)
}
