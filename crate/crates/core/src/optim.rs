//! Bound-constrained limited-memory quasi-Newton minimization.
//!
//! Two-loop L-BFGS recursion on the projected gradient, box projection of
//! every trial point, and Armijo backtracking. Gradients come from central
//! finite differences, so the objective must be evaluable in a small
//! neighborhood of the box.

use std::collections::VecDeque;

#[derive(Debug, Clone)]
pub(crate) struct Options {
    pub max_iters: usize,
    /// Convergence tolerance on the absolute objective change.
    pub tol: f64,
    /// Central-difference step.
    pub fd_step: f64,
    /// Number of curvature pairs kept.
    pub memory: usize,
}

impl Default for Options {
    fn default() -> Self {
        Self { max_iters: 100, tol: 1e-6, fd_step: 1e-3, memory: 8 }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct OptimResult {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

fn gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Zeroes gradient components that push out of the active bounds.
fn projected_gradient(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    let eps = 1e-12;
    g.iter()
        .enumerate()
        .map(|(i, &gi)| {
            if (x[i] <= lo[i] + eps && gi > 0.0) || (x[i] >= hi[i] - eps && gi < 0.0) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

fn two_loop_direction(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let alpha = rho * dot(s, &q);
        for i in 0..q.len() {
            q[i] -= alpha * y[i];
        }
        alphas.push(alpha);
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y).max(f64::MIN_POSITIVE);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), alpha) in pairs.iter().zip(alphas.into_iter().rev()) {
        let beta = rho * dot(y, &q);
        for i in 0..q.len() {
            q[i] += (alpha - beta) * s[i];
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn minimize_bounded<F: Fn(&[f64]) -> f64>(
    f: F,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: &Options,
) -> OptimResult {
    let fd = opts.fd_step;
    let fref = &f;
    minimize_bounded_with_grad(fref, |x| gradient(fref, x, fd), x0, lo, hi, opts)
}

/// As [`minimize_bounded`] but with a caller-supplied gradient (callers can
/// difference only the objective terms a coordinate touches).
pub(crate) fn minimize_bounded_with_grad<F: Fn(&[f64]) -> f64, G: Fn(&[f64]) -> Vec<f64>>(
    f: F,
    grad: G,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: &Options,
) -> OptimResult {
    assert_eq!(x0.len(), lo.len());
    assert_eq!(x0.len(), hi.len());
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let mut fx = f(&x);
    let mut g = grad(&x);
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut small_deltas = 0usize;

    // Armijo line search along `d` with box projection of each trial:
    // backtracks from 1, and expands past 1 while the sufficient-decrease
    // condition keeps holding (pure backtracking crawls along curved
    // valleys).
    let evaluate = |x: &[f64], alpha: f64, d: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let mut trial: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect();
        project(&mut trial, lo, hi);
        let step: Vec<f64> = trial.iter().zip(x).map(|(t, xi)| t - xi).collect();
        (trial, step)
    };
    let armijo = |fx: f64, ft: f64, g: &[f64], step: &[f64]| -> bool {
        let slope = dot(g, step);
        if slope < 0.0 {
            ft <= fx + 1e-4 * slope
        } else {
            ft < fx - 1e-12 * fx.abs().max(1.0)
        }
    };
    let line_search = |x: &[f64], fx: f64, g: &[f64], d: &[f64]| -> Option<(Vec<f64>, f64, Vec<f64>)> {
        let mut alpha = 1.0f64;
        for k in 0..40 {
            let (trial, step) = evaluate(x, alpha, d);
            if step.iter().all(|s| s.abs() < 1e-15) {
                return None;
            }
            let ft = f(&trial);
            if !armijo(fx, ft, g, &step) {
                alpha *= 0.5;
                continue;
            }
            if k > 0 {
                return Some((trial, ft, step));
            }
            // Accepted at the initial alpha: expand while it keeps paying.
            let mut best = (trial, ft, step);
            for _ in 0..8 {
                alpha *= 2.0;
                let (t2, s2) = evaluate(x, alpha, d);
                let f2 = f(&t2);
                if f2 < best.1 && armijo(fx, f2, g, &s2) {
                    best = (t2, f2, s2);
                } else {
                    break;
                }
            }
            return Some(best);
        }
        None
    };

    for iter in 0..opts.max_iters {
        iterations = iter + 1;
        let pg = projected_gradient(&x, &g, lo, hi);
        if pg.iter().all(|v| v.abs() < 1e-9) {
            converged = true;
            break;
        }

        let d_qn = two_loop_direction(&pg, &pairs);
        let mut hit = if dot(&d_qn, &pg) < 0.0 { line_search(&x, fx, &g, &d_qn) } else { None };
        if hit.is_none() {
            // Quasi-Newton step failed: drop stale curvature, fall back to
            // projected steepest descent.
            pairs.clear();
            let d_sd: Vec<f64> = pg.iter().map(|v| -v).collect();
            hit = line_search(&x, fx, &g, &d_sd);
        }
        let Some((trial, ft, step)) = hit else {
            // No descent direction at this resolution: treat as stationary.
            converged = true;
            break;
        };

        let g_new = grad(&trial);
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&step, &y);
        if sy > 1e-12 * norm(&step) * norm(&y) {
            pairs.push_back((step, y, 1.0 / sy));
            if pairs.len() > opts.memory {
                pairs.pop_front();
            }
        } else {
            // Negative curvature along the step: the oldest pair is the
            // first to misrepresent the local model.
            pairs.pop_front();
        }
        let delta = fx - ft;
        x = trial;
        fx = ft;
        g = g_new;
        if delta.abs() < opts.tol {
            small_deltas += 1;
            if small_deltas >= 2 {
                converged = true;
                break;
            }
        } else {
            small_deltas = 0;
        }
    }

    OptimResult { x, objective: fx, iterations, converged }
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_interior_minimum() {
        let f = |x: &[f64]| (x[0] - 1.3).powi(2) + 2.0 * (x[1] + 0.4).powi(2);
        let r = minimize_bounded(f, &[0.0, 0.0], &[-2.0, -2.0], &[2.0, 2.0], &Options::default());
        assert!((r.x[0] - 1.3).abs() < 1e-4, "{:?}", r);
        assert!((r.x[1] + 0.4).abs() < 1e-4, "{:?}", r);
    }

    #[test]
    fn minimum_outside_box_lands_on_bound() {
        let f = |x: &[f64]| (x[0] - 10.0).powi(2);
        let r = minimize_bounded(f, &[0.5], &[0.0], &[2.0], &Options::default());
        assert!((r.x[0] - 2.0).abs() < 1e-9, "{:?}", r);
        assert!(r.converged);
    }

    #[test]
    fn rosenbrock_in_box() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = Options { max_iters: 500, tol: 1e-12, fd_step: 1e-5, memory: 10 };
        let r = minimize_bounded(f, &[-1.2, 1.0], &[-2.0, -2.0], &[2.0, 2.0], &opts);
        assert!((r.x[0] - 1.0).abs() < 1e-3 && (r.x[1] - 1.0).abs() < 1e-3, "{:?}", r);
    }

    #[test]
    fn objective_never_exceeds_start() {
        let f = |x: &[f64]| x.iter().map(|v| v.abs().sqrt()).sum::<f64>();
        let x0 = [1.0, 2.0, 3.0];
        let start = f(&x0);
        let r = minimize_bounded(f, &x0, &[0.1; 3], &[4.0; 3], &Options::default());
        assert!(r.objective <= start + 1e-12);
    }
}
