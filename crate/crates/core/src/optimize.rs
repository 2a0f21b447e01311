//! Bound-constrained limited-memory BFGS.
//!
//! Works in normalized coordinates `x = (p - lo) / (hi - lo)` on the unit
//! box. Each iteration builds a quasi-Newton direction on the variables that
//! are not held at a bound, then searches along the feasible segment of that
//! direction. Failed objective evaluations count as `+inf`.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Domain("bounds must be non-empty and of equal length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::Domain("bounds need finite lower < upper componentwise".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.len() && p.iter().enumerate().all(|(i, &v)| v >= self.lower[i] && v <= self.upper[i])
    }

    pub fn normalize(&self, p: &[f64]) -> Vec<f64> {
        p.iter().enumerate().map(|(i, &v)| (v - self.lower[i]) / (self.upper[i] - self.lower[i])).collect()
    }

    /// Inverse of [`Self::normalize`]; the box faces map exactly onto the
    /// bound values.
    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, &v)| {
                if v <= 0.0 {
                    self.lower[i]
                } else if v >= 1.0 {
                    self.upper[i]
                } else {
                    self.lower[i] + v * (self.upper[i] - self.lower[i])
                }
            })
            .collect()
    }

    /// Indices whose value sits at a bound within `1e-12 |bound|`.
    pub fn active(&self, p: &[f64]) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| {
                let at = |b: f64| (p[i] - b).abs() <= 1e-12 * b.abs();
                at(self.lower[i]) || at(self.upper[i])
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    GradientTol,
    ObjectiveProgress,
    MaxLineSearch,
    MaxIter,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::GradientTol => "gradient-tol",
            Termination::ObjectiveProgress => "objective-progress",
            Termination::MaxLineSearch => "max-linesearch",
            Termination::MaxIter => "max-iter",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptOptions {
    pub memory: usize,
    /// Projected-gradient tolerance relative to the projected gradient at
    /// the start point (normalized coordinates, infinity norm).
    pub pgtol: f64,
    /// Relative objective-decrease tolerance.
    pub ftol: f64,
    pub max_linesearch: usize,
    pub max_iter: usize,
}

impl Default for OptOptions {
    fn default() -> Self {
        Self { memory: 10, pgtol: 1e-9, ftol: 1e-12, max_linesearch: 20, max_iter: 500 }
    }
}

/// One accepted iterate, in physical coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub f: f64,
    pub pg_norm: f64,
    pub p: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptResult {
    pub p: Vec<f64>,
    pub f: f64,
    /// Gradient in physical coordinates.
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub reason: Termination,
    pub active_bounds: Vec<usize>,
    pub history: Vec<IterRecord>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradient with the components that point out of the box at a face zeroed.
fn projected_gradient(x: &[f64], g: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(g)
        .map(|(&xi, &gi)| if (xi <= 0.0 && gi > 0.0) || (xi >= 1.0 && gi < 0.0) { 0.0 } else { gi })
        .collect()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

struct Memory {
    pairs: VecDeque<(Vec<f64>, Vec<f64>)>,
    cap: usize,
}

impl Memory {
    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        if self.pairs.len() == self.cap {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y));
    }

    /// Two-loop recursion on the free subspace.
    fn direction(&self, g: &[f64], free: &[bool]) -> Vec<f64> {
        let mask = |v: &[f64]| -> Vec<f64> { v.iter().zip(free).map(|(&a, &f)| if f { a } else { 0.0 }).collect() };
        let mut q = mask(g);
        let mut alphas = Vec::with_capacity(self.pairs.len());
        let mut gamma = 1.0;
        let mut used = Vec::with_capacity(self.pairs.len());
        for (s, y) in self.pairs.iter().rev() {
            let (s, y) = (mask(s), mask(y));
            let sy = dot(&s, &y);
            if sy <= 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
                continue;
            }
            let a = dot(&s, &q) / sy;
            q.iter_mut().zip(&y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push((a, sy));
            used.push((s, y));
        }
        if let Some((s, y)) = used.first() {
            gamma = dot(s, y) / dot(y, y);
        }
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y), (a, sy)) in used.iter().zip(&alphas).rev() {
            let b = dot(y, &q) / sy;
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }
}

struct Objective<'a, F> {
    f: &'a mut F,
    bounds: &'a Bounds,
    evaluations: usize,
}

impl<F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>> Objective<'_, F> {
    /// Value and normalized gradient; `None` on failure or non-finite output.
    fn eval(&mut self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        self.evaluations += 1;
        let p = self.bounds.denormalize(x);
        match (self.f)(&p) {
            Ok((v, g)) if v.is_finite() && g.len() == x.len() && g.iter().all(|c| c.is_finite()) => {
                let gx = g.iter().enumerate().map(|(i, &c)| c * (self.bounds.upper[i] - self.bounds.lower[i])).collect();
                Some((v, gx))
            }
            _ => None,
        }
    }
}

/// Largest `t` keeping `x + t d` inside the unit box.
fn max_step(x: &[f64], d: &[f64]) -> f64 {
    let mut t = f64::INFINITY;
    for (&xi, &di) in x.iter().zip(d) {
        if di > 0.0 {
            t = t.min((1.0 - xi) / di);
        } else if di < 0.0 {
            t = t.min(-xi / di);
        }
    }
    t.max(0.0)
}

/// `x + t d`, snapping components that reach a face onto it exactly.
fn step_point(x: &[f64], d: &[f64], t: f64) -> Vec<f64> {
    x.iter()
        .zip(d)
        .map(|(&xi, &di)| {
            let face = if di > 0.0 { 1.0 } else { 0.0 };
            if di != 0.0 && t >= (face - xi) / di * (1.0 - 1e-12) {
                face
            } else {
                (xi + t * di).clamp(0.0, 1.0)
            }
        })
        .collect()
}

struct Accepted {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

/// Line search on `[0, t_max]` for the strong Wolfe conditions, settling for
/// sufficient decrease when the budget runs low.
#[allow(clippy::too_many_arguments)]
fn line_search<F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>>(
    obj: &mut Objective<'_, F>,
    x: &[f64],
    f0: f64,
    g0: &[f64],
    d: &[f64],
    t_init: f64,
    budget: usize,
) -> Option<Accepted> {
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let slope0 = dot(g0, d);
    let t_max = max_step(x, d);
    if !(t_max > 0.0) || !(slope0 < 0.0) {
        return None;
    }
    let mut lo = 0.0;
    let mut hi = f64::INFINITY;
    let mut t = t_init.min(t_max);
    let mut best: Option<Accepted> = None;
    for _ in 0..budget {
        let xt = step_point(x, d, t);
        match obj.eval(&xt) {
            Some((ft, gt)) => {
                let armijo = ft <= f0 + C1 * t * slope0;
                if armijo && best.as_ref().is_none_or(|b| ft < b.f) {
                    best = Some(Accepted { x: xt.clone(), f: ft, g: gt.clone() });
                }
                if !armijo {
                    hi = t;
                } else {
                    let slope = dot(&gt, d);
                    if slope.abs() <= C2 * slope0.abs() || t >= t_max {
                        return best;
                    }
                    if slope > 0.0 {
                        hi = t;
                    } else {
                        lo = t;
                    }
                }
            }
            None => hi = t,
        }
        t = if hi.is_finite() { 0.5 * (lo + hi) } else { (2.0 * t).min(t_max) };
        if hi.is_finite() && (hi - lo) <= 1e-14 * hi.max(1e-300) {
            break;
        }
    }
    best
}

/// Minimizes `f` over the box. The callback receives physical parameters
/// and returns the objective and its gradient.
pub fn minimize<F>(mut f: F, p0: &[f64], bounds: &Bounds, opts: &OptOptions) -> Result<OptResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !bounds.contains(p0) {
        return Err(Error::Domain(format!("initial point {p0:?} outside bounds")));
    }
    let mut obj = Objective { f: &mut f, bounds, evaluations: 0 };
    let mut x: Vec<f64> = bounds.normalize(p0).into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let (mut fx, mut gx) = obj
        .eval(&x)
        .ok_or_else(|| Error::Evaluation(format!("objective failed at the initial point {p0:?}")))?;
    let mut mem = Memory { pairs: VecDeque::new(), cap: opts.memory.max(1) };
    let pg0 = inf_norm(&projected_gradient(&x, &gx));
    let pg_tol = opts.pgtol * pg0;
    let mut history = vec![IterRecord { iter: 0, f: fx, pg_norm: pg0, p: bounds.denormalize(&x) }];
    let mut reason = Termination::MaxIter;
    let mut iterations = 0;

    for it in 1..=opts.max_iter {
        let pg = projected_gradient(&x, &gx);
        if inf_norm(&pg) <= pg_tol {
            reason = Termination::GradientTol;
            break;
        }
        // variables held at a face with the gradient pushing outward
        let free: Vec<bool> = pg.iter().zip(&gx).map(|(&p, &g)| p != 0.0 || g == 0.0).collect();
        let mut d = mem.direction(&gx, &free);
        let mut restarted = mem.pairs.is_empty();
        if !(dot(&d, &gx) < 0.0) {
            mem.pairs.clear();
            d = pg.iter().map(|v| -v).collect();
            restarted = true;
        }
        let t_init = if restarted { (0.1 / inf_norm(&d)).min(1.0) } else { 1.0 };
        let mut found = line_search(&mut obj, &x, fx, &gx, &d, t_init, opts.max_linesearch);
        if found.is_none() && !restarted {
            mem.pairs.clear();
            d = pg.iter().map(|v| -v).collect();
            found = line_search(&mut obj, &x, fx, &gx, &d, (0.1 / inf_norm(&d)).min(1.0), opts.max_linesearch);
        }
        let Some(acc) = found else {
            reason = Termination::MaxLineSearch;
            break;
        };
        debug_assert!(acc.x.iter().all(|v| (0.0..=1.0).contains(v)));
        let s: Vec<f64> = acc.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = acc.g.iter().zip(&gx).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > f64::EPSILON * dot(&y, &y) {
            mem.push(s, y);
        }
        let f_prev = fx;
        x = acc.x;
        fx = acc.f;
        gx = acc.g;
        iterations = it;
        let pg_norm = inf_norm(&projected_gradient(&x, &gx));
        history.push(IterRecord { iter: it, f: fx, pg_norm, p: bounds.denormalize(&x) });
        if pg_norm <= pg_tol {
            reason = Termination::GradientTol;
            break;
        }
        if (f_prev - fx) <= opts.ftol * f_prev.abs().max(fx.abs()).max(f64::MIN_POSITIVE) {
            reason = Termination::ObjectiveProgress;
            break;
        }
    }
    let p = bounds.denormalize(&x);
    let grad = gx.iter().enumerate().map(|(i, &g)| g / (bounds.upper[i] - bounds.lower[i])).collect();
    let active_bounds = bounds.active(&p);
    Ok(OptResult { p, f: fx, grad, iterations, evaluations: obj.evaluations, reason, active_bounds, history })
}

/// `count` start points drawn uniformly in the box.
pub fn sample_starts(count: usize, bounds: &Bounds, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..bounds.len()).map(|i| rng.random_range(bounds.lower[i]..=bounds.upper[i])).collect())
        .collect()
}

#[derive(Debug)]
pub struct MultistartResult {
    pub starts: Vec<Vec<f64>>,
    /// Per-start outcome; a start whose initial evaluation failed is an error.
    pub runs: Vec<Result<OptResult>>,
}

impl MultistartResult {
    pub fn successful(&self) -> impl Iterator<Item = &OptResult> {
        self.runs.iter().filter_map(|r| r.as_ref().ok())
    }

    /// Arithmetic mean of the calibrated parameters over successful runs.
    pub fn mean(&self) -> Option<Vec<f64>> {
        let ok: Vec<&OptResult> = self.successful().collect();
        let first = ok.first()?;
        let mut m = vec![0.0; first.p.len()];
        for r in &ok {
            m.iter_mut().zip(&r.p).for_each(|(a, b)| *a += b);
        }
        m.iter_mut().for_each(|v| *v /= ok.len() as f64);
        Some(m)
    }
}

/// Runs [`minimize`] from each start. Starts run concurrently; each run is
/// deterministic so the result does not depend on scheduling.
pub fn multistart<F>(f: F, starts: Vec<Vec<f64>>, bounds: &Bounds, opts: &OptOptions) -> MultistartResult
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)> + Sync,
{
    let runs = starts.par_iter().map(|p0| minimize(&f, p0, bounds, opts)).collect();
    MultistartResult { starts, runs }
}

/// Percent deviation `|p - truth| / |truth| * 100` per component.
pub fn normalized_error(p: &[f64], truth: &[f64]) -> Vec<f64> {
    p.iter().zip(truth).map(|(a, t)| (a - t).abs() / t.abs() * 100.0).collect()
}
