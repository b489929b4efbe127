//! Deterministic first-order solvers used by structure discovery.
//!
//! Objectives return `None` when evaluation overflows; the solvers treat that
//! as an infinite value and shrink the step.

use ndarray::Array1;

use crate::scalar::Scalar;

pub(crate) struct SolveResult<T> {
    pub x: Array1<T>,
    /// Objective after each accepted step, starting with the initial value.
    pub trace: Vec<T>,
}

pub(crate) struct LbfgsOptions<T> {
    pub memory: usize,
    pub max_iter: usize,
    pub initial_step: T,
    pub gtol: T,
    pub ftol: T,
}

/// Limited-memory BFGS with Armijo backtracking.
pub(crate) fn lbfgs<T, F>(x0: Array1<T>, mut f: F, opts: &LbfgsOptions<T>) -> SolveResult<T>
where
    T: Scalar,
    F: FnMut(&Array1<T>) -> Option<(T, Array1<T>)>,
{
    let mut x = x0;
    let (mut fx, mut g) = match f(&x) {
        Some(v) => v,
        None => return SolveResult { trace: vec![], x },
    };
    let mut trace = vec![fx];
    let mut s_hist: Vec<Array1<T>> = Vec::with_capacity(opts.memory);
    let mut y_hist: Vec<Array1<T>> = Vec::with_capacity(opts.memory);
    let c1 = T::of(1e-4);

    for _ in 0..opts.max_iter {
        let gnorm = g.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        if gnorm <= opts.gtol {
            break;
        }
        let mut d = two_loop(&g, &s_hist, &y_hist);
        let mut slope = g.dot(&d);
        if !(slope < T::zero()) {
            s_hist.clear();
            y_hist.clear();
            d = g.mapv(|v| -v);
            slope = g.dot(&d);
        }
        let mut step = if s_hist.is_empty() {
            let dn = d.iter().fold(T::zero(), |m, v| m.max(v.abs()));
            (opts.initial_step / dn).min(T::one())
        } else {
            T::one()
        };
        let mut accepted = None;
        for _ in 0..60 {
            let xn = &x + &(&d * step);
            if let Some((fxn, gn)) = f(&xn) {
                if fxn.is_finite() && fxn <= fx + c1 * step * slope {
                    accepted = Some((xn, fxn, gn));
                    break;
                }
            }
            step = step * T::of(0.5);
        }
        let Some((xn, fxn, gn)) = accepted else {
            break;
        };
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > T::epsilon() * y.dot(&y) {
            if s_hist.len() == opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
        }
        let decrease = fx - fxn;
        x = xn;
        g = gn;
        let prev = fx;
        fx = fxn;
        trace.push(fx);
        if decrease <= opts.ftol * (prev.abs().max(fx.abs()).max(T::one())) {
            break;
        }
    }
    SolveResult { x, trace }
}

fn two_loop<T: Scalar>(g: &Array1<T>, s_hist: &[Array1<T>], y_hist: &[Array1<T>]) -> Array1<T> {
    let k = s_hist.len();
    let mut q = g.clone();
    let mut alpha = vec![T::zero(); k];
    let mut rho = vec![T::zero(); k];
    for i in (0..k).rev() {
        rho[i] = T::one() / y_hist[i].dot(&s_hist[i]);
        alpha[i] = rho[i] * s_hist[i].dot(&q);
        q.scaled_add(-alpha[i], &y_hist[i]);
    }
    if k > 0 {
        let gamma = s_hist[k - 1].dot(&y_hist[k - 1]) / y_hist[k - 1].dot(&y_hist[k - 1]);
        q *= gamma;
    }
    for i in 0..k {
        let beta = rho[i] * y_hist[i].dot(&q);
        q.scaled_add(alpha[i] - beta, &s_hist[i]);
    }
    q.mapv_inplace(|v| -v);
    q
}

pub(crate) struct ProxOptions<T> {
    pub max_iter: usize,
    pub initial_step: T,
    /// Multiplicative step shrink on a failed sufficient-decrease test.
    pub decay: T,
    pub tol: T,
}

/// Proximal gradient descent with backtracking on the smooth part.
///
/// `prox(z, step)` applies the proximal map of the nonsmooth term and
/// `nonsmooth(x)` evaluates it, so the reported trace is the full objective.
pub(crate) fn proximal_gradient<T, F, P, N>(
    x0: Array1<T>,
    mut smooth: F,
    prox: P,
    nonsmooth: N,
    opts: &ProxOptions<T>,
) -> SolveResult<T>
where
    T: Scalar,
    F: FnMut(&Array1<T>) -> Option<(T, Array1<T>)>,
    P: Fn(Array1<T>, T) -> Array1<T>,
    N: Fn(&Array1<T>) -> T,
{
    let mut x = x0;
    let (mut fx, mut g) = match smooth(&x) {
        Some(v) => v,
        None => return SolveResult { trace: vec![], x },
    };
    let mut total = fx + nonsmooth(&x);
    let mut trace = vec![total];
    let mut step = opts.initial_step;
    let half = T::of(0.5);
    for _ in 0..opts.max_iter {
        let mut accepted = None;
        for _ in 0..60 {
            let z = &x - &(&g * step);
            let xn = prox(z, step);
            let diff = &xn - &x;
            if let Some((fxn, gn)) = smooth(&xn) {
                let bound = fx + g.dot(&diff) + diff.dot(&diff) * half / step;
                let totaln = fxn + nonsmooth(&xn);
                if fxn.is_finite() && fxn <= bound && totaln <= total {
                    accepted = Some((xn, fxn, gn, totaln, diff));
                    break;
                }
            }
            step = step * opts.decay;
        }
        let Some((xn, fxn, gn, totaln, diff)) = accepted else {
            break;
        };
        let moved = diff.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        x = xn;
        fx = fxn;
        g = gn;
        let prev = total;
        total = totaln;
        trace.push(total);
        if moved <= opts.tol || prev - total <= opts.tol * prev.abs().max(T::one()) {
            break;
        }
        // let the step recover after a run of backtracks
        step = step / opts.decay.sqrt();
    }
    SolveResult { x, trace }
}

/// Soft-thresholding `sign(v) * max(|v| - k, 0)`.
pub(crate) fn soft_threshold<T: Scalar>(v: T, k: T) -> T {
    if v > k {
        v - k
    } else if v < -k {
        v + k
    } else {
        T::zero()
    }
}
