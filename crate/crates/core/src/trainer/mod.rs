//! Filter learning: unit-norm trivialization, L-BFGS, restarts and pairwise staging.
//!
//! Filters are parametrized by an unconstrained `W` whose columns are
//! normalized on every evaluation, `f_k = w_k / ‖w_k‖`. The chain rule maps a
//! filter gradient `g_k` to `(I - f_k f_kᵀ) g_k / ‖w_k‖`. L-BFGS minimizes the
//! negated objective over `W`.

mod lbfgs;
mod objective;

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::distances::DistanceKind;
use crate::linalg;
use crate::stats::{self, ClassEnsemble};
use crate::{Error, Result};

pub use objective::{objective, objective_gradient, profile_step, StepProfile};
pub(crate) use objective::PairwiseObjective;

/// Column-norm tolerance for [`FilterBank`].
pub const UNIT_NORM_TOL: f64 = 1e-10;

/// Seed offset between sequential stages, so stage `k` restart `r` uses
/// `seed + k · STAGE_SEED_STRIDE + r`.
pub const STAGE_SEED_STRIDE: u64 = 1_000_003;

/// An `n × m` matrix of unit-norm filters, one per column, with `m ≤ n`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    filters: DMatrix<f64>,
}

impl FilterBank {
    pub fn new(filters: DMatrix<f64>) -> Result<Self> {
        if filters.ncols() > filters.nrows() {
            return Err(Error::InvalidArgument(format!(
                "{} filters exceed data dimension {}",
                filters.ncols(),
                filters.nrows()
            )));
        }
        for (k, col) in filters.column_iter().enumerate() {
            let norm = col.norm();
            if !((norm - 1.0).abs() <= UNIT_NORM_TOL) {
                return Err(Error::InvalidArgument(format!("filter {k} has norm {norm}")));
            }
        }
        Ok(Self { filters })
    }

    /// Normalizes every column of `w`.
    pub fn from_unnormalized(w: &DMatrix<f64>) -> Result<Self> {
        Self::new(normalize_columns(w)?)
    }

    /// First `m` coordinate axes.
    pub fn coordinate(n: usize, m: usize) -> Result<Self> {
        Self::new(DMatrix::identity(n, m))
    }

    pub fn n(&self) -> usize {
        self.filters.nrows()
    }

    pub fn m(&self) -> usize {
        self.filters.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.filters
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.filters
    }

    /// Leading `m` filters.
    pub fn leading(&self, m: usize) -> Result<Self> {
        if m > self.m() {
            return Err(Error::DimensionMismatch {
                expected: self.m(),
                found: m,
            });
        }
        Ok(Self {
            filters: self.filters.columns(0, m).into_owned(),
        })
    }

    /// Orthonormal basis of the same span, for reporting.
    pub fn orthogonalized(&self) -> Self {
        Self {
            filters: linalg::orthonormal_columns(&self.filters),
        }
    }

    pub fn to_record(&self, sigma2: f64, kind: &str) -> FilterRecord {
        FilterRecord {
            n: self.n(),
            m: self.m(),
            sigma2,
            kind: kind.to_string(),
            filters: stats::matrix_rows(&self.filters),
        }
    }
}

/// On-disk form of a filter bank: `filters` holds the `n` rows of `F`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterRecord {
    pub n: usize,
    pub m: usize,
    pub sigma2: f64,
    pub kind: String,
    pub filters: Vec<Vec<f64>>,
}

impl FilterRecord {
    pub fn bank(&self) -> Result<FilterBank> {
        if self.filters.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: self.filters.len(),
            });
        }
        FilterBank::new(stats::matrix_from_rows(&self.filters, self.m)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?)
    }
}

pub(crate) fn normalize_columns(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut f = w.clone();
    for (k, mut col) in f.column_iter_mut().enumerate() {
        let norm = col.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidArgument(format!("filter {k} has norm {norm}")));
        }
        col /= norm;
    }
    Ok(f)
}

/// Pulls a gradient in `F` back to the unnormalized `W` with `F = W diag(1/‖w_k‖)`.
pub fn normalization_gradient(w: &DMatrix<f64>, grad_f: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = grad_f.clone();
    for k in 0..w.ncols() {
        let norm = w.column(k).norm();
        let f = w.column(k) / norm;
        let radial = f.dot(&grad_f.column(k));
        let mut col = out.column_mut(k);
        col.axpy(-radial, &f, 1.0);
        col /= norm;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub kind: DistanceKind,
    pub sigma2: f64,
    pub m: usize,
    pub seed: u64,
    pub restarts: usize,
    pub tol: f64,
    pub max_iters: usize,
    pub sequential_pairs: bool,
    pub lbfgs_memory: usize,
}

impl TrainConfig {
    pub fn new(kind: DistanceKind, m: usize) -> Self {
        Self {
            kind,
            sigma2: 0.01,
            m,
            seed: 0,
            restarts: 20,
            tol: 1e-6,
            max_iters: 500,
            sequential_pairs: false,
            lbfgs_memory: 10,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.m == 0 || self.m > n {
            return bad(format!("m = {} must lie in 1..={n}", self.m));
        }
        if self.sequential_pairs && !self.m.is_multiple_of(2) {
            return bad(format!("sequential pairs need an even m, got {}", self.m));
        }
        if !(self.sigma2 >= 0.0) {
            return bad(format!("sigma2 must be nonnegative, got {}", self.sigma2));
        }
        if !(self.tol > 0.0) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if self.restarts == 0 || self.max_iters == 0 || self.lbfgs_memory == 0 {
            return bad("restarts, max_iters and lbfgs_memory must be positive".into());
        }
        Ok(())
    }

    fn lbfgs(&self) -> lbfgs::LbfgsSettings {
        lbfgs::LbfgsSettings::new(self.lbfgs_memory, self.tol, self.max_iters)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ObjectiveTolerance,
    GradientVanished,
    MaxIterations,
    LineSearchStalled,
    NoImprovingStep,
}

impl StopReason {
    pub fn converged(self) -> bool {
        matches!(self, StopReason::ObjectiveTolerance | StopReason::GradientVanished)
    }
}

/// One accepted iterate. Iteration 0 is the initial point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub stage: usize,
    pub restart: usize,
    pub seed: u64,
    pub iteration: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub stage: usize,
    pub restart: usize,
    pub seed: u64,
    pub objective: f64,
    pub iterations: usize,
    pub stop: StopReason,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<IterationRecord>,
    pub restarts: Vec<RestartSummary>,
    /// Per stage, the index of the winning restart.
    pub selected: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    pub wall_time: Duration,
}

#[derive(Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum LogLine<'a> {
    Iteration(&'a IterationRecord),
    Restart(&'a RestartSummary),
    Final {
        converged: bool,
        iterations: usize,
        objective: f64,
        selected: &'a [usize],
    },
}

impl TrainLog {
    /// Objective trace of one restart within one stage.
    pub fn trace(&self, stage: usize, restart: usize) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.stage == stage && r.restart == restart)
            .map(|r| r.objective)
            .collect()
    }

    pub fn stage_summaries(&self, stage: usize) -> Vec<&RestartSummary> {
        self.restarts.iter().filter(|r| r.stage == stage).collect()
    }

    /// JSON lines: one `iteration` record per accepted iterate, one `restart`
    /// summary per restart, then a `final` line. Wall time is left out so that
    /// reruns produce identical files.
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, &LogLine::Iteration(r))?;
            writeln!(w)?;
        }
        for r in &self.restarts {
            serde_json::to_writer(&mut w, &LogLine::Restart(r))?;
            writeln!(w)?;
        }
        serde_json::to_writer(
            &mut w,
            &LogLine::Final {
                converged: self.converged,
                iterations: self.iterations,
                objective: self.objective,
                selected: &self.selected,
            },
        )?;
        writeln!(w)?;
        Ok(())
    }
}

/// Something to maximize over filters: value and gradient in `F`.
pub(crate) trait FilterObjective {
    fn evaluate(&self, filters: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)>;
}

pub(crate) fn stage_seed(seed: u64, stage: usize, restart: usize) -> u64 {
    seed.wrapping_add((stage as u64).wrapping_mul(STAGE_SEED_STRIDE))
        .wrapping_add(restart as u64)
}

fn random_init(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, m, |_, _| StandardNormal.sample(&mut rng))
}

/// Runs restarts (and stages when `cfg.sequential_pairs`) of L-BFGS on `obj`.
pub(crate) fn train<O: FilterObjective>(obj: &O, n: usize, cfg: &TrainConfig) -> Result<(FilterBank, TrainLog)> {
    cfg.validate(n)?;
    let start = Instant::now();
    let widths = if cfg.sequential_pairs {
        vec![2; cfg.m / 2]
    } else {
        vec![cfg.m]
    };
    let mut log = TrainLog {
        converged: true,
        ..TrainLog::default()
    };
    let mut fixed = DMatrix::zeros(n, 0);
    for (stage, &width) in widths.iter().enumerate() {
        let (free, objective, stop, iterations) = run_stage(obj, &fixed, width, stage, cfg, &mut log)?;
        fixed = concat(&fixed, &free);
        log.converged &= stop.converged();
        log.iterations += iterations;
        log.objective = objective;
    }
    log.wall_time = start.elapsed();
    Ok((FilterBank::new(fixed)?, log))
}

fn concat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

fn run_stage<O: FilterObjective>(
    obj: &O,
    fixed: &DMatrix<f64>,
    width: usize,
    stage: usize,
    cfg: &TrainConfig,
    log: &mut TrainLog,
) -> Result<(DMatrix<f64>, f64, StopReason, usize)> {
    let n = fixed.nrows();
    let m0 = fixed.ncols();
    let mut best: Option<(DMatrix<f64>, f64, StopReason, usize, usize)> = None;
    for restart in 0..cfg.restarts {
        let seed = stage_seed(cfg.seed, stage, restart);
        let w0 = random_init(n, width, seed);
        // minimize the negated objective over vec(W)
        let eval = |x: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
            let w = DMatrix::from_column_slice(n, width, x.as_slice());
            let free = normalize_columns(&w)?;
            let (v, g) = obj.evaluate(&concat(fixed, &free))?;
            let gw = normalization_gradient(&w, &g.columns(m0, width).into_owned());
            Ok((-v, -DVector::from_column_slice(gw.as_slice())))
        };
        let records = &mut log.records;
        let outcome = lbfgs::minimize(
            DVector::from_column_slice(w0.as_slice()),
            cfg.lbfgs(),
            eval,
            |a| {
                records.push(IterationRecord {
                    stage,
                    restart,
                    seed,
                    iteration: a.iteration,
                    objective: -a.f,
                    grad_norm: a.grad.norm(),
                    step: a.step,
                })
            },
        )?;
        let value = -outcome.f;
        log.restarts.push(RestartSummary {
            stage,
            restart,
            seed,
            objective: value,
            iterations: outcome.iterations,
            stop: outcome.stop,
        });
        if outcome.stop == StopReason::NoImprovingStep {
            continue;
        }
        if best.as_ref().is_none_or(|b| value > b.1) {
            let w = DMatrix::from_column_slice(n, width, outcome.x.as_slice());
            best = Some((normalize_columns(&w)?, value, outcome.stop, outcome.iterations, restart));
        }
    }
    match best {
        Some((free, value, stop, iterations, restart)) => {
            log.selected.push(restart);
            Ok((free, value, stop, iterations))
        }
        None => {
            log.converged = false;
            Err(Error::NoImprovingStep {
                log: Box::new(std::mem::take(log)),
            })
        }
    }
}

/// Maximizes the pairwise objective selected by `cfg.kind`, returning the
/// filters from the best restart (ties go to the lowest seed). Honors
/// `cfg.sequential_pairs`.
pub fn fit(ens: &ClassEnsemble, cfg: &TrainConfig) -> Result<(FilterBank, TrainLog)> {
    let obj = PairwiseObjective::new(ens, cfg.kind, cfg.sigma2);
    train(&obj, ens.dim(), cfg)
}

/// Learns filters two at a time, holding earlier pairs fixed while the new pair
/// maximizes the full objective. Stage 0 uses the same seeds as [`fit`].
pub fn fit_sequential_pairs(ens: &ClassEnsemble, cfg: &TrainConfig) -> Result<(FilterBank, TrainLog)> {
    let cfg = TrainConfig {
        sequential_pairs: true,
        ..cfg.clone()
    };
    fit(ens, &cfg)
}
