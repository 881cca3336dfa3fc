//! Shared local-search machinery: L-BFGS with backtracking line search,
//! finite-difference gradients, and a deterministic multi-start driver.
//!
//! All design problems in this crate are smooth (or piecewise smooth)
//! non-convex functions of a few dozen real parameters, attacked by
//! best-of-N local searches from seeded random starts. Determinism contract:
//! given the same seed, the same starts are generated for any `n_starts`
//! prefix, starts are solved independently (possibly in parallel), and
//! aggregation is order-independent with ties broken by lowest start index.

use rayon::prelude::*;

/// Options for [`lbfgs`].
#[derive(Debug, Clone)]
pub struct LbfgsOptions {
    /// Iteration cap.
    pub max_iterations: usize,
    /// History pairs kept for the two-loop recursion.
    pub memory: usize,
    /// Convergence: `‖g‖_∞ <= grad_tol · (1 + |f|)`.
    pub grad_tol: f64,
    /// Convergence: relative objective decrease below this for two steps.
    pub f_tol: f64,
    /// Line-search backtracking cap.
    pub max_line_search: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            max_iterations: 300,
            memory: 8,
            grad_tol: 1e-8,
            f_tol: 1e-14,
            max_line_search: 40,
        }
    }
}

/// Result of one local search.
#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    /// Best point found.
    pub x: Vec<f64>,
    /// Objective at `x`.
    pub f: f64,
    /// Gradient infinity norm at `x`.
    pub grad_norm: f64,
    /// Iterations used.
    pub iterations: usize,
    /// Whether a convergence test fired (rather than the iteration cap).
    pub converged: bool,
}

/// Minimizes `f` from `x0` using L-BFGS with Armijo backtracking.
///
/// The objective callback writes the gradient into its second argument and
/// returns the function value.
pub fn lbfgs<F>(mut obj: F, x0: &[f64], opts: &LbfgsOptions) -> LbfgsOutcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut f = obj(&x, &mut g);

    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();

    let mut converged = false;
    let mut iterations = 0;
    let mut stall = 0usize;

    for iter in 0..opts.max_iterations {
        iterations = iter;
        let gnorm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gnorm <= opts.grad_tol * (1.0 + f.abs()) {
            converged = true;
            break;
        }

        // Two-loop recursion for the search direction d = -H g.
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let k = s_hist.len();
        let mut alphas = vec![0.0; k];
        for i in (0..k).rev() {
            let a = rho_hist[i] * dot(&s_hist[i], &d);
            alphas[i] = a;
            axpy(-a, &y_hist[i], &mut d);
        }
        if k > 0 {
            let sy = dot(&s_hist[k - 1], &y_hist[k - 1]);
            let yy = dot(&y_hist[k - 1], &y_hist[k - 1]);
            if yy > 0.0 {
                let gamma = sy / yy;
                for v in d.iter_mut() {
                    *v *= gamma;
                }
            }
        } else {
            // First step: scale to unit parameter change.
            let scale = 1.0 / gnorm.max(1e-12);
            for v in d.iter_mut() {
                *v *= scale.min(1.0);
            }
        }
        for i in 0..k {
            let b = rho_hist[i] * dot(&y_hist[i], &d);
            axpy(alphas[i] - b, &s_hist[i], &mut d);
        }

        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            // Curvature failure: fall back to steepest descent.
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            if slope >= 0.0 {
                converged = true;
                break;
            }
        }

        // Armijo backtracking.
        let mut step = 1.0;
        let c1 = 1e-4;
        let mut accepted = false;
        let mut x_new = vec![0.0; n];
        let mut g_new = vec![0.0; n];
        let mut f_new = f;
        for _ in 0..opts.max_line_search {
            for i in 0..n {
                x_new[i] = x[i] + step * d[i];
            }
            f_new = obj(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= f + c1 * step * slope {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // No progress along this direction; treat as converged.
            converged = true;
            break;
        }

        let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm2(&s) * norm2(&y) {
            if s_hist.len() == opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
            rho_hist.push(1.0 / sy);
            s_hist.push(s);
            y_hist.push(y);
        }

        let df = f - f_new;
        x = x_new.clone();
        g = g_new.clone();
        f = f_new;
        if df <= opts.f_tol * (1.0 + f.abs()) {
            stall += 1;
            if stall >= 2 {
                converged = true;
                break;
            }
        } else {
            stall = 0;
        }
    }

    let grad_norm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    LbfgsOutcome { x, f, grad_norm, iterations, converged }
}

/// L-BFGS on a value-only objective: the gradient is approximated by
/// central differences once per iteration (components in parallel), and the
/// Armijo line search evaluates values only. Suited to objectives whose
/// exact gradient is unavailable but whose evaluation is cheap.
pub fn lbfgs_fd<F>(obj: &F, x0: &[f64], fd_step: f64, opts: &LbfgsOptions) -> LbfgsOutcome
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut f = obj(&x);
    let mut g = central_diff_gradient(obj, &x, fd_step);

    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut stall = 0usize;

    for iter in 0..opts.max_iterations {
        iterations = iter;
        let gnorm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gnorm <= opts.grad_tol * (1.0 + f.abs()) {
            converged = true;
            break;
        }
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let k = s_hist.len();
        let mut alphas = vec![0.0; k];
        for i in (0..k).rev() {
            let a = rho_hist[i] * dot(&s_hist[i], &d);
            alphas[i] = a;
            axpy(-a, &y_hist[i], &mut d);
        }
        if k > 0 {
            let sy = dot(&s_hist[k - 1], &y_hist[k - 1]);
            let yy = dot(&y_hist[k - 1], &y_hist[k - 1]);
            if yy > 0.0 {
                let gamma = sy / yy;
                for v in d.iter_mut() {
                    *v *= gamma;
                }
            }
        } else {
            let scale = (1.0 / gnorm.max(1e-12)).min(1.0);
            for v in d.iter_mut() {
                *v *= scale;
            }
        }
        for i in 0..k {
            let b = rho_hist[i] * dot(&y_hist[i], &d);
            axpy(alphas[i] - b, &s_hist[i], &mut d);
        }
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            if slope >= 0.0 {
                converged = true;
                break;
            }
        }

        let mut step = 1.0;
        let c1 = 1e-4;
        let mut accepted = false;
        let mut x_new = vec![0.0; n];
        let mut f_new = f;
        for _ in 0..opts.max_line_search {
            for i in 0..n {
                x_new[i] = x[i] + step * d[i];
            }
            f_new = obj(&x_new);
            if f_new.is_finite() && f_new <= f + c1 * step * slope {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            converged = true;
            break;
        }
        let g_new = central_diff_gradient(obj, &x_new, fd_step);
        let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm2(&s) * norm2(&y) {
            if s_hist.len() == opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
            rho_hist.push(1.0 / sy);
            s_hist.push(s);
            y_hist.push(y);
        }
        let df = f - f_new;
        x = x_new.clone();
        g = g_new;
        f = f_new;
        if df <= opts.f_tol * (1.0 + f.abs()) {
            stall += 1;
            if stall >= 2 {
                converged = true;
                break;
            }
        } else {
            stall = 0;
        }
    }
    let grad_norm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    LbfgsOutcome { x, f, grad_norm, iterations, converged }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Central finite-difference gradient, component evaluations in parallel.
pub fn central_diff_gradient<F>(f: &F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    (0..x.len())
        .into_par_iter()
        .map(|i| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            (f(&xp) - f(&xm)) / (2.0 * h)
        })
        .collect()
}

/// Cyclic pattern search for derivative-free minimization: each coordinate
/// is probed in ± direction with a shrinking step.
pub fn pattern_search<F>(f: &F, x0: &[f64], initial_step: f64, max_sweeps: usize, tol: f64) -> (Vec<f64>, f64, bool)
where
    F: Fn(&[f64]) -> f64,
{
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    let mut step = initial_step;
    for _ in 0..max_sweeps {
        let mut improved = false;
        for i in 0..x.len() {
            let orig = x[i];
            x[i] = orig + step;
            let fp = f(&x);
            if fp < fx {
                fx = fp;
                improved = true;
                continue;
            }
            x[i] = orig - step;
            let fm = f(&x);
            if fm < fx {
                fx = fm;
                improved = true;
                continue;
            }
            x[i] = orig;
        }
        if !improved {
            step *= 0.5;
            if step < tol {
                return (x, fx, true);
            }
        }
    }
    (x, fx, false)
}

/// One multi-start outcome.
#[derive(Debug, Clone)]
pub struct StartOutcome<T> {
    /// Which start produced this outcome.
    pub start_index: usize,
    /// Final objective (non-finite marks a failed start).
    pub cost: f64,
    /// Convergence flag of the local search.
    pub converged: bool,
    /// Solver payload (parameters, design, ...).
    pub payload: T,
}

/// Runs `n_starts` independent solves in parallel, ordered by start index.
pub fn run_starts<T, F>(n_starts: usize, solve: F) -> Vec<StartOutcome<T>>
where
    T: Send,
    F: Fn(usize) -> StartOutcome<T> + Sync + Send,
{
    (0..n_starts).into_par_iter().map(solve).collect()
}

/// Index of the best finite-cost outcome; ties broken by lowest start index.
pub fn best_start<T>(outcomes: &[StartOutcome<T>]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, o) in outcomes.iter().enumerate() {
        if !o.cost.is_finite() {
            continue;
        }
        match best {
            None => best = Some(i),
            Some(b) => {
                if o.cost < outcomes[b].cost {
                    best = Some(i);
                }
            }
        }
    }
    best
}
