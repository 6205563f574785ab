//! Finite-difference validation of the analytic derivatives.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{eval_at, grad_at, loglik_at, Family, ModelSpec, Order, ParamPoint, Series};
use crate::error::Result;

/// `max |a - b| / max(1, max |b|)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = b.iter().map(|v| v.abs()).fold(1.0, f64::max);
    num / den
}

pub fn random_series(rng: &mut impl Rng, m: usize, n: usize, scale: f64) -> Series {
    let data = (0..m * n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    Series::new(m, data).expect("finite draws")
}

/// A valid parameter point with moderate coefficients.
pub fn random_theta(rng: &mut impl Rng, spec: &ModelSpec) -> Vec<f64> {
    let d = spec.dim();
    let off = spec.cov_offset();
    let mut th = vec![0.0; d];
    match spec.family {
        Family::Varma => {
            for v in th.iter_mut().take(off) {
                *v = rng.random_range(-0.25..0.25);
            }
            let mut k = off;
            for r in 0..spec.m {
                for c in 0..=r {
                    th[k] = if r == c { rng.random_range(0.6..1.5) } else { rng.random_range(-0.4..0.4) };
                    k += 1;
                }
            }
        }
        Family::Mgarch => {
            for v in th.iter_mut().take(spec.m) {
                *v = rng.random_range(0.5..2.0);
            }
            let nrec = (spec.p + spec.q) * spec.m * spec.m;
            let scale = 0.7 / (nrec as f64).max(1.0) * spec.m as f64;
            for v in th.iter_mut().take(off).skip(spec.m) {
                *v = rng.random_range(0.01..scale.min(0.4));
            }
            for v in th.iter_mut().skip(off) {
                *v = rng.random_range(-0.5..0.5) / spec.m as f64;
            }
        }
    }
    th
}

/// A small random model of the given family (orders up to 2, optional
/// intercept, restriction or horizon).
pub fn random_spec(rng: &mut impl Rng, family: Family) -> ModelSpec {
    let m = rng.random_range(1..=2);
    let p = rng.random_range(1..=2);
    let q = rng.random_range(0..=2);
    let spec = match family {
        Family::Varma => {
            if m == 2 && rng.random_bool(0.3) {
                ModelSpec::final_equations(m, p, q.max(1)).expect("valid layout")
            } else {
                ModelSpec::varma(m, p, q).expect("valid layout").with_intercept(rng.random_bool(0.5))
            }
        }
        Family::Mgarch => ModelSpec::mgarch(m, p, q).expect("valid layout"),
    };
    if rng.random_bool(0.3) {
        spec.with_horizon(Some(rng.random_range(3..10)))
    } else {
        spec
    }
}

fn shifted(th: &[f64], i: usize, by: f64) -> ParamPoint {
    let mut p = th.to_vec();
    p[i] += by;
    ParamPoint(DVector::from_vec(p))
}

/// Five-point central differences of the log-likelihood.
pub fn fd_grad(spec: &ModelSpec, x: &Series, t: usize, th: &[f64], step: f64) -> Result<Vec<f64>> {
    (0..th.len())
        .map(|i| {
            let f = |k: f64| loglik_at(spec, x, t, &shifted(th, i, k * step));
            Ok((f(-2.0)? - 8.0 * f(-1.0)? + 8.0 * f(1.0)? - f(2.0)?) / (12.0 * step))
        })
        .collect()
}

/// Five-point central differences of the analytic score, row-major.
pub fn fd_hess(spec: &ModelSpec, x: &Series, t: usize, th: &[f64], step: f64) -> Result<Vec<f64>> {
    let d = th.len();
    let mut h = vec![0.0; d * d];
    for i in 0..d {
        let g = |k: f64| grad_at(spec, x, t, &shifted(th, i, k * step));
        let (a, b, c, e) = (g(-2.0)?, g(-1.0)?, g(1.0)?, g(2.0)?);
        for j in 0..d {
            h[i * d + j] = (a[j] - 8.0 * b[j] + 8.0 * c[j] - e[j]) / (12.0 * step);
        }
    }
    Ok(h)
}

/// Relative gradient and Hessian errors at one observation.
pub fn derivative_errors(spec: &ModelSpec, x: &Series, t: usize, th: &[f64]) -> Result<(f64, f64)> {
    let ev = eval_at(spec, x, t, &ParamPoint::new(spec, th.to_vec())?, Order::Hessian)?;
    let g = rel_err(ev.grad.as_slice(), &fd_grad(spec, x, t, th, 2e-4)?);
    let h_an: Vec<f64> = ev.hess.transpose().as_slice().to_vec();
    let h = rel_err(&h_an, &fd_hess(spec, x, t, th, 2e-4)?);
    Ok((g, h))
}

/// Worst errors over a batch of configurations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub configs: usize,
    pub grad_err: f64,
    pub hess_err: f64,
}

/// Checks `configs` random points of `spec` (or of random specs of its
/// family when `vary_spec`) on random series of length 40. With
/// `zero_coef` the mean/recursion coefficients are set to zero.
pub fn gradcheck(spec: &ModelSpec, configs: usize, seed: u64, vary_spec: bool, zero_coef: bool) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GradCheck { configs, grad_err: 0.0, hess_err: 0.0 };
    for _ in 0..configs {
        let s = if vary_spec { random_spec(&mut rng, spec.family) } else { spec.clone() };
        let mut th = random_theta(&mut rng, &s);
        if zero_coef {
            let start = if s.family == Family::Mgarch { s.m } else { 0 };
            th[start..s.cov_offset()].iter_mut().for_each(|v| *v = 0.0);
        }
        let x = random_series(&mut rng, s.m, 40, 1.0);
        let t = rng.random_range(1..=40);
        let (g, h) = derivative_errors(&s, &x, t, &th)?;
        out.grad_err = out.grad_err.max(g);
        out.hess_err = out.hess_err.max(h);
    }
    Ok(out)
}
