//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

use nalgebra::DVector;

use super::ObjectiveEvaluation;
use crate::error::{Error, Result};

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const MAX_LINE_SEARCH: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stop when `max |∇f| ≤ tol`.
    pub tol: f64,
    /// Stop when `(f_k − f_{k+1}) ≤ ftol · max(|f_k|, |f_{k+1}|, 1)`.
    pub ftol: f64,
    pub max_iter: usize,
    /// Number of correction pairs kept.
    pub memory: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            ftol: 1e-10,
            max_iter: 1000,
            memory: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverStatus {
    GradientTolerance,
    FunctionTolerance,
    MaxIterations,
    /// No step with sufficient decrease was found; the best iterate is returned.
    LineSearchFailure,
}

#[derive(Debug, Clone)]
pub struct SolverResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: SolverStatus,
}

impl SolverResult {
    pub fn line_search_failed(&self) -> bool {
        self.status == SolverStatus::LineSearchFailure
    }
}

struct Point {
    x: DVector<f64>,
    f: f64,
    g: DVector<f64>,
}

/// Minimizes a smooth function from `x0`.
///
/// Non-finite values at trial points are treated as "step too long". The
/// returned point never has a larger objective than `x0`.
pub fn minimize_unconstrained<F>(mut objective: F, x0: DVector<f64>, opts: &SolverOptions) -> Result<SolverResult>
where
    F: FnMut(&DVector<f64>) -> ObjectiveEvaluation,
{
    let mut evaluations = 1;
    let first = objective(&x0);
    if !first.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    let mut cur = Point {
        x: x0,
        f: first.value,
        g: first.gradient,
    };
    let mut history: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;
    let mut status = SolverStatus::MaxIterations;

    if cur.g.amax() <= opts.tol {
        status = SolverStatus::GradientTolerance;
    } else {
        while iterations < opts.max_iter {
            let mut dir = two_loop(&cur.g, &history);
            let mut step0 = if history.is_empty() {
                (1.0 / cur.g.norm()).min(1.0)
            } else {
                1.0
            };
            let mut dg = dir.dot(&cur.g);
            if !(dg < 0.0) {
                history.clear();
                dir = -&cur.g;
                dg = dir.dot(&cur.g);
                step0 = (1.0 / cur.g.norm()).min(1.0);
            }
            let mut found = line_search(&mut objective, &cur, &dir, dg, step0, &mut evaluations);
            if found.is_none() && !history.is_empty() {
                history.clear();
                dir = -&cur.g;
                dg = dir.dot(&cur.g);
                step0 = (1.0 / cur.g.norm()).min(1.0);
                found = line_search(&mut objective, &cur, &dir, dg, step0, &mut evaluations);
            }
            let Some(next) = found else {
                status = SolverStatus::LineSearchFailure;
                break;
            };
            iterations += 1;

            let s = &next.x - &cur.x;
            let y = &next.g - &cur.g;
            let sy = s.dot(&y);
            if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
                if history.len() == opts.memory {
                    history.pop_front();
                }
                history.push_back((s, y, 1.0 / sy));
            }
            let decrease = cur.f - next.f;
            let scale = cur.f.abs().max(next.f.abs()).max(1.0);
            cur = next;
            if cur.g.amax() <= opts.tol {
                status = SolverStatus::GradientTolerance;
                break;
            }
            if decrease <= opts.ftol * scale {
                status = SolverStatus::FunctionTolerance;
                break;
            }
        }
    }
    Ok(SolverResult {
        grad_norm: cur.g.amax(),
        x: cur.x,
        value: cur.f,
        iterations,
        evaluations,
        status,
    })
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

struct Trial {
    alpha: f64,
    f: f64,
    dg: f64,
    point: Option<Point>,
}

fn evaluate<F>(objective: &mut F, cur: &Point, dir: &DVector<f64>, alpha: f64, evals: &mut usize) -> Trial
where
    F: FnMut(&DVector<f64>) -> ObjectiveEvaluation,
{
    *evals += 1;
    let x = &cur.x + dir * alpha;
    let e = objective(&x);
    if !e.is_finite() {
        return Trial {
            alpha,
            f: f64::INFINITY,
            dg: f64::NAN,
            point: None,
        };
    }
    let dg = e.gradient.dot(dir);
    Trial {
        alpha,
        f: e.value,
        dg,
        point: Some(Point {
            x,
            f: e.value,
            g: e.gradient,
        }),
    }
}

fn line_search<F>(
    objective: &mut F,
    cur: &Point,
    dir: &DVector<f64>,
    dg0: f64,
    step0: f64,
    evals: &mut usize,
) -> Option<Point>
where
    F: FnMut(&DVector<f64>) -> ObjectiveEvaluation,
{
    let armijo = |t: &Trial| t.f <= cur.f + C1 * t.alpha * dg0;
    let curvature = |t: &Trial| t.dg.abs() <= -C2 * dg0;

    let mut prev = Trial {
        alpha: 0.0,
        f: cur.f,
        dg: dg0,
        point: None,
    };
    let mut alpha = step0;
    for i in 0..MAX_LINE_SEARCH {
        let t = evaluate(objective, cur, dir, alpha, evals);
        if !armijo(&t) || (i > 0 && t.f >= prev.f) {
            return zoom(objective, cur, dir, dg0, prev, t, evals);
        }
        if curvature(&t) {
            return t.point;
        }
        if t.dg >= 0.0 {
            return zoom(objective, cur, dir, dg0, t, prev, evals);
        }
        alpha *= 2.0;
        prev = t;
    }
    prev.point
}

fn zoom<F>(
    objective: &mut F,
    cur: &Point,
    dir: &DVector<f64>,
    dg0: f64,
    mut lo: Trial,
    mut hi: Trial,
    evals: &mut usize,
) -> Option<Point>
where
    F: FnMut(&DVector<f64>) -> ObjectiveEvaluation,
{
    for _ in 0..MAX_LINE_SEARCH {
        let width = (hi.alpha - lo.alpha).abs();
        if width <= 1e-16 * lo.alpha.abs().max(hi.alpha.abs()).max(1e-300) {
            break;
        }
        let alpha = interpolate(&lo, &hi);
        let t = evaluate(objective, cur, dir, alpha, evals);
        if t.f > cur.f + C1 * alpha * dg0 || t.f >= lo.f {
            hi = t;
        } else {
            if t.dg.abs() <= -C2 * dg0 {
                return t.point;
            }
            if t.dg * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = t;
        }
    }
    // fall back to the best sufficient-decrease point seen
    lo.point.filter(|p| p.f < cur.f)
}

/// Safeguarded cubic interpolation inside `[lo, hi]`.
fn interpolate(lo: &Trial, hi: &Trial) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let mid = 0.5 * (a + b);
    if !(hi.f.is_finite() && hi.dg.is_finite() && lo.dg.is_finite()) {
        return mid;
    }
    let d1 = lo.dg + hi.dg - 3.0 * (lo.f - hi.f) / (a - b);
    let disc = d1 * d1 - lo.dg * hi.dg;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let denom = hi.dg - lo.dg + 2.0 * d2;
    if denom == 0.0 {
        return mid;
    }
    let cand = b - (b - a) * (hi.dg + d2 - d1) / denom;
    let (left, right) = if a < b { (a, b) } else { (b, a) };
    let margin = 0.1 * (right - left);
    if cand.is_finite() && cand > left + margin && cand < right - margin {
        cand
    } else {
        mid
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(c: &DVector<f64>) -> impl FnMut(&DVector<f64>) -> ObjectiveEvaluation + '_ {
        move |x| {
            let d = x - c;
            ObjectiveEvaluation::new(d.norm_squared(), d * 2.0)
        }
    }

    #[test]
    fn quadratic_reaches_center() {
        let c = DVector::from_vec(vec![1.0, -2.0, 3.0, 0.5]);
        let r = minimize_unconstrained(quadratic(&c), DVector::zeros(4), &SolverOptions::default()).unwrap();
        assert!((r.x - &c).amax() < 1e-6);
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &DVector<f64>| {
            let (a, b) = (x[0], x[1]);
            let value = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let grad = DVector::from_vec(vec![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ]);
            ObjectiveEvaluation::new(value, grad)
        };
        let opts = SolverOptions {
            tol: 1e-10,
            ftol: 0.0,
            ..Default::default()
        };
        let r = minimize_unconstrained(f, DVector::from_vec(vec![-1.2, 1.0]), &opts).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r.x);
    }

    #[test]
    fn stationary_start_is_returned_unchanged() {
        let c = DVector::from_vec(vec![0.3, 0.7]);
        let r = minimize_unconstrained(quadratic(&c), c.clone(), &SolverOptions::default()).unwrap();
        assert_eq!(r.x, c);
        assert_eq!(r.iterations, 0);
        assert_eq!(r.status, SolverStatus::GradientTolerance);
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let f = |x: &DVector<f64>| ObjectiveEvaluation::new(f64::NAN, x.clone());
        assert!(minimize_unconstrained(f, DVector::zeros(2), &SolverOptions::default()).is_err());
    }

    #[test]
    fn never_increases_objective_on_nonsmooth_input() {
        // sum of absolute values smoothed very sharply
        let f = |x: &DVector<f64>| {
            let mut v = 0.0;
            let mut g = DVector::zeros(x.len());
            for i in 0..x.len() {
                let (a, d) = crate::optim::smooth_abs(x[i] - i as f64, 1e-8);
                v += a;
                g[i] = d;
            }
            ObjectiveEvaluation::new(v, g)
        };
        let x0 = DVector::from_vec(vec![5.0, -3.0, 2.5]);
        let start = f(&x0).value;
        let r = minimize_unconstrained(f, x0, &SolverOptions::default()).unwrap();
        assert!(r.value <= start);
        assert!(r.value < 1e-2);
    }

    #[test]
    fn infinite_region_is_avoided() {
        // barrier at x >= 2: minimizer of (x - 3)^2 restricted to x < 2 region is near the wall
        let f = |x: &DVector<f64>| {
            if x[0] >= 2.0 {
                ObjectiveEvaluation::new(f64::INFINITY, x.clone())
            } else {
                ObjectiveEvaluation::new((x[0] - 3.0).powi(2), DVector::from_vec(vec![2.0 * (x[0] - 3.0)]))
            }
        };
        let r = minimize_unconstrained(f, DVector::from_vec(vec![0.0]), &SolverOptions::default()).unwrap();
        assert!(r.x[0] < 2.0 && r.value < 9.0);
    }
}
