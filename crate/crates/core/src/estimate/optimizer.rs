//! Projected Newton ascent with box bounds.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::models::Order;

/// Objective value with optional derivatives (maximization).
#[derive(Debug, Clone)]
pub(crate) struct Eval {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Options {
    pub grad_tol: f64,
    pub step_tol: f64,
    pub max_iter: usize,
    pub armijo: f64,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            grad_tol: 1e-6,
            step_tol: 1e-9,
            max_iter: 200,
            armijo: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<f64>,
    /// Final Hessian approximation.
    pub hess: DMatrix<f64>,
}

/// Maximizes `f` subject to `lo <= x <= hi` (bounds may be infinite).
///
/// `f(x, order)` returns the value and, up to `order`, the gradient and
/// Hessian (other fields ignored). The exact Hessian is computed at the start
/// and refreshed whenever a step backtracks or the gradient fails to halve;
/// in between it is carried forward by BFGS updates from gradient-only
/// evaluations. A supplied `h0` (e.g. from a neighbouring problem) replaces
/// the initial exact Hessian. Evaluation errors at trial points count as an infeasible
/// objective of minus infinity.
pub(crate) fn maximize<F>(
    mut f: F,
    x0: DVector<f64>,
    h0: Option<DMatrix<f64>>,
    lo: &[f64],
    hi: &[f64],
    opts: Options,
) -> Result<Outcome>
where
    F: FnMut(&DVector<f64>, Order) -> Result<Eval>,
{
    let n = x0.len();
    let project = |x: &mut DVector<f64>| {
        for i in 0..n {
            x[i] = x[i].clamp(lo[i], hi[i]);
        }
    };
    let free_norm = |x: &DVector<f64>, g: &DVector<f64>| {
        (0..n)
            .filter(|&i| !((x[i] <= lo[i] && g[i] < 0.0) || (x[i] >= hi[i] && g[i] > 0.0)))
            .map(|i| g[i].abs())
            .fold(0.0, f64::max)
    };
    let mut x = x0;
    project(&mut x);
    let (mut ev, mut hess) = match h0 {
        Some(h) if h.nrows() == n && h.ncols() == n => (f(&x, Order::Gradient)?, h),
        _ => {
            let ev = f(&x, Order::Hessian)?;
            let h = ev.hess.clone();
            (ev, h)
        }
    };
    let mut history = vec![ev.value];
    let mut converged = false;
    let mut iterations = 0;
    let mut grad_norm = free_norm(&x, &ev.grad);

    while iterations < opts.max_iter {
        let g = ev.grad.clone();
        if !grad_norm.is_finite() {
            break;
        }
        if grad_norm < opts.grad_tol {
            converged = true;
            break;
        }
        // epsilon-active set: coordinates within eps of a bound with the
        // gradient pointing outwards are moved onto the bound directly
        let eps = (0..n)
            .map(|i| (x[i] - (x[i] + g[i]).clamp(lo[i], hi[i])).abs())
            .fold(0.0, f64::max)
            .min(1e-3);
        let at_lo = |i: usize| x[i] <= lo[i] + eps && g[i] < 0.0;
        let at_hi = |i: usize| x[i] >= hi[i] - eps && g[i] > 0.0;
        let free: Vec<usize> = (0..n).filter(|&i| !(at_lo(i) || at_hi(i))).collect();
        let mut dir = newton_direction(&hess, &g, &free);
        for i in 0..n {
            if at_lo(i) {
                dir[i] = lo[i] - x[i];
            } else if at_hi(i) {
                dir[i] = hi[i] - x[i];
            }
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for k in 0..60 {
            let mut xn = &x + &dir * alpha;
            project(&mut xn);
            let step = &xn - &x;
            if step.amax() < opts.step_tol {
                break;
            }
            let slope = g.dot(&step);
            // full step evaluated with the gradient, backtracks value-only
            let order = if k == 0 { Order::Gradient } else { Order::Value };
            if let Ok(t) = f(&xn, order) {
                if t.value.is_finite() && t.value >= ev.value + opts.armijo * slope {
                    accepted = Some((xn, t, k == 0));
                    break;
                }
            }
            alpha *= 0.5;
        }
        iterations += 1;
        let Some((xn, t, full)) = accepted else {
            // line search exhausted: accept only a nearly stationary point
            converged = grad_norm < 100.0 * opts.grad_tol;
            break;
        };
        let step = &xn - &x;
        let small = step.amax() < opts.step_tol;
        x = xn;
        ev = if full { t } else { f(&x, Order::Gradient)? };
        history.push(ev.value);
        let new_norm = free_norm(&x, &ev.grad);
        if !full || new_norm > 0.5 * grad_norm {
            ev = f(&x, Order::Hessian)?;
            hess = ev.hess.clone();
        } else {
            bfgs_update(&mut hess, &step, &(&ev.grad - &g));
        }
        grad_norm = new_norm;
        if small {
            converged = true;
            break;
        }
    }
    grad_norm = free_norm(&x, &ev.grad);
    Ok(Outcome {
        value: ev.value,
        x,
        grad_norm,
        iterations,
        converged,
        history,
        hess,
    })
}

/// BFGS update of a Hessian approximation for a maximization problem
/// (applied to `-H`); skipped when the curvature condition fails.
fn bfgs_update(hess: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) {
    // with B = -H and yb = -y: B+ = B - B s s' B / s'Bs + yb yb' / yb's
    let yb = -y;
    let sy = yb.dot(s);
    if !(sy > 1e-12 * s.norm() * yb.norm()) {
        return;
    }
    let bs = -(&*hess * s);
    let sbs = s.dot(&bs);
    if !(sbs > 0.0) {
        return;
    }
    let b = -(&*hess) - &bs * bs.transpose() / sbs + &yb * yb.transpose() / sy;
    *hess = -b;
}

/// Newton ascent direction on the free coordinates; the Hessian is replaced
/// by its negative-definite absolute-eigenvalue modification.
fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>, free: &[usize]) -> DVector<f64> {
    let n = grad.len();
    let k = free.len();
    let mut dir = DVector::zeros(n);
    if k == 0 {
        return dir;
    }
    let neg_h = DMatrix::from_fn(k, k, |i, j| -hess[(free[i], free[j])]);
    let g = DVector::from_fn(k, |i, _| grad[free[i]]);
    let eig = neg_h.symmetric_eigen();
    let scale = eig.eigenvalues.amax();
    let floor = (1e-8 * scale).max(1e-12);
    let vtg = eig.eigenvectors.transpose() * &g;
    let scaled = DVector::from_fn(k, |i, _| vtg[i] / eig.eigenvalues[i].abs().max(floor));
    let p = &eig.eigenvectors * scaled;
    for (i, &fi) in free.iter().enumerate() {
        dir[fi] = p[i];
    }
    dir
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(x: &DVector<f64>, _d: Order) -> Result<Eval> {
        // -(x0 - 1)^2 - 2 (x1 + 3)^2 + x0 x1 / 2
        let v = -(x[0] - 1.0).powi(2) - 2.0 * (x[1] + 3.0).powi(2) + 0.5 * x[0] * x[1];
        let g = DVector::from_vec(vec![
            -2.0 * (x[0] - 1.0) + 0.5 * x[1],
            -4.0 * (x[1] + 3.0) + 0.5 * x[0],
        ]);
        let h = DMatrix::from_row_slice(2, 2, &[-2.0, 0.5, 0.5, -4.0]);
        Ok(Eval { value: v, grad: g, hess: h })
    }

    #[test]
    fn quadratic_one_step() {
        let inf = f64::INFINITY;
        let out = maximize(quad, DVector::zeros(2), None, &[-inf, -inf], &[inf, inf], Options::default()).unwrap();
        assert!(out.converged);
        assert!(out.iterations <= 2);
        // stationary point solves H x = -b
        let h = DMatrix::from_row_slice(2, 2, &[-2.0, 0.5, 0.5, -4.0]);
        let b = DVector::from_vec(vec![2.0, -12.0]);
        let xs = h.lu().solve(&(-b)).unwrap();
        assert!((&out.x - xs).amax() < 1e-10);
    }

    #[test]
    fn bound_becomes_active() {
        let inf = f64::INFINITY;
        let out = maximize(quad, DVector::zeros(2), None, &[-inf, -1.0], &[inf, inf], Options::default()).unwrap();
        assert!(out.converged);
        assert_eq!(out.x[1], -1.0);
        assert!((out.x[0] - (1.0 - 0.25)).abs() < 1e-10);
        assert!(out.history.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn nonconcave_start_still_ascends() {
        // f = -x^4 + x^2 has a local minimum at 0 and maxima at +-1/sqrt 2
        let f = |x: &DVector<f64>, _d: Order| -> Result<Eval> {
            let v = x[0];
            Ok(Eval {
                value: -v.powi(4) + v * v,
                grad: DVector::from_element(1, -4.0 * v.powi(3) + 2.0 * v),
                hess: DMatrix::from_element(1, 1, -12.0 * v * v + 2.0),
            })
        };
        let out = maximize(f, DVector::from_element(1, 0.1), None, &[f64::NEG_INFINITY], &[f64::INFINITY], Options::default()).unwrap();
        assert!(out.converged);
        assert!((out.x[0] - 0.5f64.sqrt()).abs() < 1e-6);
        assert!(out.history.windows(2).all(|w| w[1] >= w[0]));
    }
}
