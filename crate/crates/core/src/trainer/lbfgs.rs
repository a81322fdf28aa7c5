//! Limited-memory BFGS with a strong-Wolfe line search, minimizing `f`.

use std::collections::VecDeque;

use nalgebra::DVector;

use super::StopReason;
use crate::Result;

#[derive(Debug, Clone, Copy)]
pub(crate) struct LbfgsSettings {
    pub memory: usize,
    pub tol: f64,
    pub max_iters: usize,
    pub c1: f64,
    pub c2: f64,
}

impl LbfgsSettings {
    pub fn new(memory: usize, tol: f64, max_iters: usize) -> Self {
        Self {
            memory,
            tol,
            max_iters,
            c1: 1e-4,
            c2: 0.9,
        }
    }
}

pub(crate) struct LbfgsOutcome {
    pub x: DVector<f64>,
    pub f: f64,
    pub iterations: usize,
    pub stop: StopReason,
}

/// One accepted iterate: index, value, gradient norm, step length.
pub(crate) struct Accepted<'a> {
    pub iteration: usize,
    pub f: f64,
    pub grad: &'a DVector<f64>,
    pub step: f64,
}

const MAX_BRACKET: usize = 25;
const MAX_ZOOM: usize = 30;

struct Trial {
    alpha: f64,
    f: f64,
    dphi: f64,
    x: DVector<f64>,
    g: DVector<f64>,
}

/// Minimizes `eval` from `x0`. The initial evaluation must succeed; failures at
/// trial points count as `+∞` so the line search backs off.
pub(crate) fn minimize<E, C>(
    x0: DVector<f64>,
    settings: LbfgsSettings,
    mut eval: E,
    mut on_accept: C,
) -> Result<LbfgsOutcome>
where
    E: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
    C: FnMut(Accepted<'_>),
{
    let (mut f, mut g) = eval(&x0)?;
    let mut x = x0;
    on_accept(Accepted {
        iteration: 0,
        f,
        grad: &g,
        step: 0.0,
    });
    let mut history: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::new();
    let mut iteration = 0;

    loop {
        if gradient_vanished(&g, f) {
            return Ok(done(x, f, iteration, StopReason::GradientVanished));
        }
        if iteration >= settings.max_iters {
            return Ok(done(x, f, iteration, StopReason::MaxIterations));
        }

        let mut dir = two_loop(&g, &history);
        let mut dphi0 = g.dot(&dir);
        if !(dphi0 < 0.0) {
            history.clear();
            dir = -&g;
            dphi0 = g.dot(&dir);
        }
        let alpha0 = if history.is_empty() { 1.0 / g.norm() } else { 1.0 };
        let mut trial = line_search(&x, f, dphi0, &dir, alpha0, &settings, &mut eval);
        if trial.is_none() && !history.is_empty() {
            history.clear();
            dir = -&g;
            dphi0 = g.dot(&dir);
            trial = line_search(&x, f, dphi0, &dir, 1.0 / g.norm(), &settings, &mut eval);
        }
        let Some(t) = trial else {
            let stop = if iteration == 0 {
                StopReason::NoImprovingStep
            } else {
                StopReason::LineSearchStalled
            };
            return Ok(done(x, f, iteration, stop));
        };

        let s = &t.x - &x;
        let y = &t.g - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if history.len() == settings.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        let delta = (f - t.f).abs();
        x = t.x;
        f = t.f;
        g = t.g;
        iteration += 1;
        on_accept(Accepted {
            iteration,
            f,
            grad: &g,
            step: t.alpha,
        });
        if delta <= settings.tol {
            return Ok(done(x, f, iteration, StopReason::ObjectiveTolerance));
        }
    }
}

fn done(x: DVector<f64>, f: f64, iterations: usize, stop: StopReason) -> LbfgsOutcome {
    LbfgsOutcome {
        x,
        f,
        iterations,
        stop,
    }
}

fn gradient_vanished(g: &DVector<f64>, f: f64) -> bool {
    g.norm() <= 1e-12 * f.abs().max(1.0)
}

fn two_loop(g: &DVector<f64>, history: &VecDeque<(DVector<f64>, DVector<f64>, f64)>) -> DVector<f64> {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * s.dot(&q);
        q.axpy(-a, y, 1.0);
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        q *= s.dot(y) / y.dot(y);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * y.dot(&q);
        q.axpy(a - b, s, 1.0);
    }
    -q
}

fn line_search<E>(
    x: &DVector<f64>,
    f0: f64,
    dphi0: f64,
    dir: &DVector<f64>,
    alpha0: f64,
    settings: &LbfgsSettings,
    eval: &mut E,
) -> Option<Trial>
where
    E: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let mut probe = |alpha: f64| -> Trial {
        let xt = x + dir * alpha;
        match eval(&xt) {
            Ok((f, g)) if f.is_finite() => Trial {
                alpha,
                f,
                dphi: g.dot(dir),
                x: xt,
                g,
            },
            _ => Trial {
                alpha,
                f: f64::INFINITY,
                dphi: f64::NAN,
                g: DVector::zeros(xt.len()),
                x: xt,
            },
        }
    };
    let armijo = |t: &Trial| t.f <= f0 + settings.c1 * t.alpha * dphi0;
    let curvature = |t: &Trial| t.dphi.abs() <= -settings.c2 * dphi0;
    // best point satisfying sufficient decrease, used if zoom runs out
    let mut fallback: Option<Trial> = None;
    let mut keep = |t: &Trial, fallback: &mut Option<Trial>| {
        if armijo(t) && t.f < f0 && fallback.as_ref().is_none_or(|b| t.f < b.f) {
            *fallback = Some(Trial {
                alpha: t.alpha,
                f: t.f,
                dphi: t.dphi,
                x: t.x.clone(),
                g: t.g.clone(),
            });
        }
    };

    let mut prev = Trial {
        alpha: 0.0,
        f: f0,
        dphi: dphi0,
        x: x.clone(),
        g: DVector::zeros(0),
    };
    let mut alpha = alpha0;
    for i in 0..MAX_BRACKET {
        let t = probe(alpha);
        if !armijo(&t) || (i > 0 && t.f >= prev.f) {
            return zoom(prev, t, f0, dphi0, settings, &mut probe, &mut fallback, &mut keep);
        }
        if curvature(&t) {
            return Some(t);
        }
        keep(&t, &mut fallback);
        if t.dphi >= 0.0 {
            return zoom(t, prev, f0, dphi0, settings, &mut probe, &mut fallback, &mut keep);
        }
        alpha *= 2.0;
        prev = t;
    }
    fallback
}

#[allow(clippy::too_many_arguments)]
fn zoom<P, K>(
    mut lo: Trial,
    mut hi: Trial,
    f0: f64,
    dphi0: f64,
    settings: &LbfgsSettings,
    probe: &mut P,
    fallback: &mut Option<Trial>,
    keep: &mut K,
) -> Option<Trial>
where
    P: FnMut(f64) -> Trial,
    K: FnMut(&Trial, &mut Option<Trial>),
{
    for _ in 0..MAX_ZOOM {
        let alpha = interpolate(&lo, &hi);
        if (hi.alpha - lo.alpha).abs() <= 1e-16 * lo.alpha.abs().max(1e-300) {
            break;
        }
        let t = probe(alpha);
        if t.f > f0 + settings.c1 * alpha * dphi0 || t.f >= lo.f {
            hi = t;
        } else {
            if t.dphi.abs() <= -settings.c2 * dphi0 {
                return Some(t);
            }
            keep(&t, fallback);
            if t.dphi * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = t;
        }
    }
    fallback.take()
}

/// Minimizer of the quadratic through `(lo.f, lo.dphi, hi.f)`, kept inside the
/// middle 80% of the bracket; bisection when that fails.
fn interpolate(lo: &Trial, hi: &Trial) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let width = b - a;
    let mid = 0.5 * (a + b);
    if !hi.f.is_finite() || !lo.dphi.is_finite() {
        return mid;
    }
    let denom = 2.0 * (hi.f - lo.f - lo.dphi * width);
    if denom <= 0.0 {
        return mid;
    }
    let step = -lo.dphi * width * width / denom;
    let cand = a + step;
    let (left, right) = if a < b { (a, b) } else { (b, a) };
    let margin = 0.1 * (right - left);
    if cand.is_finite() && cand > left + margin && cand < right - margin {
        cand
    } else {
        mid
    }
}
