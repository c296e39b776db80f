//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! Minimizes an objective given as a closure returning `(f, ∇f)`. A closure
//! returning `None`, or a non-finite value, marks the trial point as
//! infeasible; the line search then backs off. Accepted steps always satisfy
//! the sufficient-decrease condition, so the sequence of objective values is
//! non-increasing.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct LbfgsConfig {
    pub max_iterations: usize,
    pub memory: usize,
    /// Stop when |f_k - f_{k+1}| ≤ rel_tol · (1 + |f_{k+1}|).
    pub rel_tol: f64,
    /// Stop when ‖∇f‖_∞ ≤ grad_tol · (1 + |f|).
    pub grad_tol: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            memory: 10,
            rel_tol: 1e-9,
            grad_tol: 1e-6,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 30,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    GradientTolerance,
    RelativeChange,
    MaxIterations,
    /// No step along the current direction (nor steepest descent) improved f.
    LineSearchStalled,
    /// Nothing to optimize.
    EmptyProblem,
}

#[derive(Clone, Debug)]
pub struct Minimization {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    /// Objective value at the start and after each accepted step.
    pub trace: Vec<f64>,
    pub termination: Termination,
}

impl Minimization {
    pub fn converged(&self) -> bool {
        matches!(
            self.termination,
            Termination::GradientTolerance | Termination::RelativeChange | Termination::EmptyProblem
        )
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

struct Evaluator<F> {
    f: F,
    count: usize,
}

impl<F> Evaluator<F>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    fn eval(&mut self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        self.count += 1;
        match (self.f)(x) {
            Some((v, g)) if v.is_finite() && g.iter().all(|gi| gi.is_finite()) => Some((v, g)),
            _ => None,
        }
    }
}

struct Trial {
    alpha: f64,
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

pub fn minimize<F>(objective: F, x0: &[f64], cfg: &LbfgsConfig) -> Result<Minimization>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let mut ev = Evaluator {
        f: objective,
        count: 0,
    };
    let (mut f, mut g) = ev
        .eval(x0)
        .ok_or_else(|| Error::NonFinite("objective at the starting point".into()))?;
    let mut x = x0.to_vec();
    let mut trace = vec![f];
    let finish = |x, f, g, it, ev: &Evaluator<F>, trace, termination| Minimization {
        x,
        f,
        grad: g,
        iterations: it,
        evaluations: ev.count,
        trace,
        termination,
    };
    if x.is_empty() {
        return Ok(finish(x, f, g, 0, &ev, trace, Termination::EmptyProblem));
    }
    if inf_norm(&g) <= cfg.grad_tol * (1.0 + f.abs()) {
        return Ok(finish(x, f, g, 0, &ev, trace, Termination::GradientTolerance));
    }

    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        let mut d = two_loop(&g, &history);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            history.clear();
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        let alpha0 = if history.is_empty() {
            (1.0 / inf_norm(&d)).min(1.0)
        } else {
            1.0
        };
        let step = match line_search(&mut ev, &x, f, &d, slope, alpha0, cfg) {
            Some(t) => t,
            None if !history.is_empty() => {
                // Retry once along steepest descent with fresh memory.
                history.clear();
                let d: Vec<f64> = g.iter().map(|v| -v).collect();
                let slope = dot(&g, &d);
                let alpha0 = (1.0 / inf_norm(&d)).min(1.0);
                match line_search(&mut ev, &x, f, &d, slope, alpha0, cfg) {
                    Some(t) => t,
                    None => {
                        return Ok(finish(x, f, g, iterations, &ev, trace, Termination::LineSearchStalled))
                    }
                }
            }
            None => return Ok(finish(x, f, g, iterations, &ev, trace, Termination::LineSearchStalled)),
        };
        iterations += 1;

        let s: Vec<f64> = step.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = step.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if history.len() == cfg.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        let f_prev = f;
        x = step.x;
        f = step.f;
        g = step.g;
        trace.push(f);
        let _ = step.alpha;

        if inf_norm(&g) <= cfg.grad_tol * (1.0 + f.abs()) {
            return Ok(finish(x, f, g, iterations, &ev, trace, Termination::GradientTolerance));
        }
        if (f_prev - f).abs() <= cfg.rel_tol * (1.0 + f.abs()) {
            return Ok(finish(x, f, g, iterations, &ev, trace, Termination::RelativeChange));
        }
    }
    Ok(finish(x, f, g, iterations, &ev, trace, Termination::MaxIterations))
}

fn two_loop(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}

fn line_search<F>(
    ev: &mut Evaluator<F>,
    x: &[f64],
    f0: f64,
    d: &[f64],
    slope0: f64,
    alpha0: f64,
    cfg: &LbfgsConfig,
) -> Option<Trial>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let at = |alpha: f64| -> Vec<f64> { x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect() };
    let armijo = |alpha: f64, fa: f64| fa <= f0 + cfg.c1 * alpha * slope0;

    // (alpha, f, slope) of the bracket's low end; alpha = 0 is the start point.
    let mut prev = (0.0, f0, slope0);
    let mut best: Option<Trial> = None;
    let mut alpha = alpha0;
    let mut hi: Option<(f64, f64, f64)> = None;

    let mut budget = cfg.max_line_search;
    while budget > 0 {
        budget -= 1;
        let xa = at(alpha);
        let Some((fa, ga)) = ev.eval(&xa) else {
            hi = Some((alpha, f64::INFINITY, f64::NAN));
            break;
        };
        let sa = dot(&ga, d);
        if !armijo(alpha, fa) || (prev.0 > 0.0 && fa >= prev.1) {
            hi = Some((alpha, fa, sa));
            break;
        }
        let trial = Trial { alpha, x: xa, f: fa, g: ga };
        if sa.abs() <= -cfg.c2 * slope0 {
            return Some(trial);
        }
        if sa >= 0.0 {
            // Minimum bracketed between alpha and prev.
            hi = Some(prev);
            prev = (alpha, fa, sa);
            best = Some(trial);
            break;
        }
        prev = (alpha, fa, sa);
        best = Some(trial);
        alpha *= 2.0;
    }

    let Some(mut hi) = hi else {
        return best;
    };
    let mut lo = prev;
    while budget > 0 {
        budget -= 1;
        let a = interpolate(lo, hi);
        let xa = at(a);
        let Some((fa, ga)) = ev.eval(&xa) else {
            hi = (a, f64::INFINITY, f64::NAN);
            continue;
        };
        let sa = dot(&ga, d);
        if !armijo(a, fa) || fa >= lo.1 {
            hi = (a, fa, sa);
            continue;
        }
        let trial = Trial { alpha: a, x: xa, f: fa, g: ga };
        if sa.abs() <= -cfg.c2 * slope0 {
            return Some(trial);
        }
        if sa * (hi.0 - lo.0) >= 0.0 {
            hi = lo;
        }
        lo = (a, fa, sa);
        best = Some(trial);
        if (hi.0 - lo.0).abs() <= 1e-14 * lo.0.abs().max(1e-300) {
            break;
        }
    }
    best
}

/// Safeguarded cubic interpolation inside the bracket, falling back to bisection.
fn interpolate(lo: (f64, f64, f64), hi: (f64, f64, f64)) -> f64 {
    let (a0, f0, d0) = lo;
    let (a1, f1, d1) = hi;
    let (left, right) = if a0 < a1 { (a0, a1) } else { (a1, a0) };
    let width = right - left;
    let mid = 0.5 * (a0 + a1);
    if !(f1.is_finite() && d1.is_finite()) {
        return mid;
    }
    let d1c = d0 + d1 - 3.0 * (f0 - f1) / (a0 - a1);
    let disc = d1c * d1c - d0 * d1;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (a1 - a0).signum() * disc.sqrt();
    let denom = d1 - d0 + 2.0 * d2;
    if denom == 0.0 {
        return mid;
    }
    let a = a1 - (a1 - a0) * (d1 + d2 - d1c) / denom;
    if a.is_finite() && a > left + 0.1 * width && a < right - 0.1 * width {
        a
    } else {
        mid
    }
}
