//! Local linear quasi-maximum likelihood.
//!
//! At a target `tau` the local likelihood
//!
//! ```text
//! L_tau(eta1, eta2) = T^{-1} sum_t l(x_t, z_{t-1}; eta1 + eta2 (tau_t - tau) / h) K_h(tau_t - tau)
//! ```
//!
//! is maximized over the level `eta1 = theta(tau)` and the scaled slope
//! `eta2 = h theta'(tau)`. [`fit_curve`] repeats this along a grid at `h`
//! and `h / sqrt(2)` and combines the two by the jackknife
//! `theta~ = 2 theta^_{h/sqrt2} - theta^_h`.

mod init;
mod optimizer;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{Bandwidth, KernelSpec};
use crate::models::{validate_theta, ModelSpec, ObsOut, Order, Series, Workspace};

pub use init::preliminary_init;

/// Level and scaled slope of a local linear parameter expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalParams {
    pub eta1: DVector<f64>,
    pub eta2: DVector<f64>,
}

impl LocalParams {
    pub fn new(eta1: DVector<f64>, eta2: DVector<f64>) -> Self {
        Self { eta1, eta2 }
    }

    /// Zero slope at `theta`.
    pub fn constant(theta: DVector<f64>) -> Self {
        let d = theta.len();
        Self {
            eta1: theta,
            eta2: DVector::zeros(d),
        }
    }

    /// `eta1 + u eta2`.
    pub fn at(&self, u: f64) -> DVector<f64> {
        &self.eta1 + &self.eta2 * u
    }

    #[cfg(test)]
    fn stacked(&self) -> DVector<f64> {
        let d = self.eta1.len();
        DVector::from_fn(2 * d, |i, _| if i < d { self.eta1[i] } else { self.eta2[i - d] })
    }

    #[cfg(test)]
    fn from_stacked(x: &DVector<f64>) -> Self {
        let d = x.len() / 2;
        Self {
            eta1: x.rows(0, d).into_owned(),
            eta2: x.rows(d, d).into_owned(),
        }
    }

    /// Clamps the level into the parameter box.
    pub fn project(&mut self, spec: &ModelSpec) {
        spec.project(self.eta1.as_mut_slice());
    }

    /// Rescales the slope for a different bandwidth.
    pub fn rescaled(&self, from: Bandwidth, to: Bandwidth) -> Self {
        Self {
            eta1: self.eta1.clone(),
            eta2: &self.eta2 * (to.value() / from.value()),
        }
    }
}

/// Value (and optionally derivatives in the stacked `(eta1, eta2)`
/// coordinates) of the local likelihood.
#[derive(Debug, Clone)]
pub struct LocalEval {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

/// Result of one local maximization.
#[derive(Debug, Clone)]
pub struct LocalFit {
    pub tau: f64,
    pub h: Bandwidth,
    pub params: LocalParams,
    pub loglik: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every accepted step (nondecreasing).
    pub history: Vec<f64>,
}

/// Kernel window: `(t, K_h(tau_t - tau) / T, u_t)` for every observation with
/// positive weight, optionally leaving one index out.
pub(crate) fn window(n: usize, tau: f64, h: f64, leave_out: Option<usize>) -> Vec<(usize, f64, f64)> {
    let k = KernelSpec::EPANECHNIKOV;
    let lo = ((tau - h) * n as f64).floor().max(1.0) as usize;
    let hi = (((tau + h) * n as f64).ceil() as usize).min(n);
    (lo..=hi)
        .filter(|&t| Some(t) != leave_out)
        .filter_map(|t| {
            let x = t as f64 / n as f64 - tau;
            let w = k.scaled(x, h);
            (w > 0.0).then_some((t, w / n as f64, x / h))
        })
        .collect()
}

/// `(eta1 + eta2, eta1 - eta2)`.
fn to_ends(p: &LocalParams) -> DVector<f64> {
    let d = p.eta1.len();
    DVector::from_fn(2 * d, |i, _| if i < d { p.eta1[i] + p.eta2[i] } else { p.eta1[i - d] - p.eta2[i - d] })
}

fn from_ends(x: &DVector<f64>) -> LocalParams {
    let d = x.len() / 2;
    LocalParams {
        eta1: DVector::from_fn(d, |i, _| 0.5 * (x[i] + x[d + i])),
        eta2: DVector::from_fn(d, |i, _| 0.5 * (x[i] - x[d + i])),
    }
}

/// Pulls a stacked `(eta1, eta2)` gradient back to endpoint coordinates
/// (the map is its own transpose).
fn ends_jacobian(g: &DVector<f64>) -> DVector<f64> {
    let d = g.len() / 2;
    DVector::from_fn(2 * d, |i, _| if i < d { 0.5 * (g[i] + g[d + i]) } else { 0.5 * (g[i - d] - g[i]) })
}

const CHUNK: usize = 16;

/// Sums the per-observation local-likelihood terms over `win`. Chunks are
/// evaluated in parallel and reduced in a fixed order, so the result does
/// not depend on the thread count.
fn accumulate(
    spec: &ModelSpec,
    series: &Series,
    win: &[(usize, f64, f64)],
    params: &LocalParams,
    order: Order,
) -> Result<LocalEval> {
    let d = spec.dim();
    let parts: Vec<Result<LocalEval>> = win
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut ws = Workspace::new(spec);
            let mut out = ObsOut::new(d);
            let mut acc = LocalEval {
                value: 0.0,
                grad: DVector::zeros(if order >= Order::Gradient { 2 * d } else { 0 }),
                hess: DMatrix::zeros(
                    if order >= Order::Hessian { 2 * d } else { 0 },
                    if order >= Order::Hessian { 2 * d } else { 0 },
                ),
            };
            for &(t, w, u) in chunk {
                let theta = params.at(u);
                ws.eval_obs(spec, series, t, theta.as_slice(), order, &mut out)?;
                acc.value += w * out.loglik;
                if order >= Order::Gradient {
                    for i in 0..d {
                        acc.grad[i] += w * out.grad[i];
                        acc.grad[d + i] += w * u * out.grad[i];
                    }
                }
                if order >= Order::Hessian {
                    let (w1, w2) = (w * u, w * u * u);
                    for i in 0..d {
                        for j in 0..d {
                            let hij = out.hess[i * d + j];
                            acc.hess[(i, j)] += w * hij;
                            acc.hess[(i, d + j)] += w1 * hij;
                            acc.hess[(d + i, j)] += w1 * hij;
                            acc.hess[(d + i, d + j)] += w2 * hij;
                        }
                    }
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total: Option<LocalEval> = None;
    for p in parts {
        let p = p?;
        match &mut total {
            None => total = Some(p),
            Some(t) => {
                t.value += p.value;
                t.grad += p.grad;
                t.hess += p.hess;
            }
        }
    }
    total.ok_or(Error::Precondition("empty kernel window".into()))
}

pub(crate) fn check_inputs(spec: &ModelSpec, series: &Series) -> Result<()> {
    if series.dim() != spec.m {
        return Err(Error::InvalidSeries(format!(
            "series has dimension {}, model expects {}",
            series.dim(),
            spec.m
        )));
    }
    if series.len() < spec.min_sample() {
        return Err(Error::InvalidSeries(format!(
            "T = {} below the minimum {}",
            series.len(),
            spec.min_sample()
        )));
    }
    Ok(())
}

/// Local likelihood `L_tau(eta1, eta2)` with derivatives up to `order`.
pub fn local_loglik(
    spec: &ModelSpec,
    series: &Series,
    tau: f64,
    h: Bandwidth,
    params: &LocalParams,
    order: Order,
) -> Result<LocalEval> {
    local_loglik_impl(spec, series, tau, h, params, order, None)
}

pub(crate) fn local_loglik_impl(
    spec: &ModelSpec,
    series: &Series,
    tau: f64,
    h: Bandwidth,
    params: &LocalParams,
    order: Order,
    leave_out: Option<usize>,
) -> Result<LocalEval> {
    if series.dim() != spec.m || params.eta1.len() != spec.dim() || params.eta2.len() != spec.dim() {
        return Err(Error::InvalidParams("dimension mismatch".into()));
    }
    let win = window(series.len(), tau, h.value(), leave_out);
    if win.is_empty() {
        return Err(Error::EmptyWindow { tau });
    }
    accumulate(spec, series, &win, params, order)
}

/// Maximizes the local likelihood at `tau` from `init`.
pub fn fit_local(
    spec: &ModelSpec,
    series: &Series,
    tau: f64,
    h: Bandwidth,
    init: &LocalParams,
) -> Result<LocalFit> {
    check_inputs(spec, series)?;
    fit_local_impl(spec, series, tau, h, init, None)
}

pub(crate) fn fit_local_impl(
    spec: &ModelSpec,
    series: &Series,
    tau: f64,
    h: Bandwidth,
    init: &LocalParams,
    leave_out: Option<usize>,
) -> Result<LocalFit> {
    fit_local_warm(spec, series, tau, h, init, None, leave_out).map(|(f, _)| f)
}

/// [`fit_local_impl`] with an optional starting Hessian in the stacked
/// coordinates; also returns the final Hessian approximation.
#[allow(clippy::too_many_arguments)]
pub(crate) fn fit_local_warm(
    spec: &ModelSpec,
    series: &Series,
    tau: f64,
    h: Bandwidth,
    init: &LocalParams,
    h0: Option<DMatrix<f64>>,
    leave_out: Option<usize>,
) -> Result<(LocalFit, DMatrix<f64>)> {
    let d = spec.dim();
    if init.eta1.len() != d || init.eta2.len() != d {
        return Err(Error::InvalidParams(format!("expected {d} parameters")));
    }
    let win = window(series.len(), tau, h.value(), leave_out);
    if win.is_empty() {
        return Err(Error::EmptyWindow { tau });
    }
    // The optimizer works on the window endpoints a = eta1 + eta2 and
    // b = eta1 - eta2; boxing both keeps every eta1 + u eta2, |u| <= 1, in
    // the parameter box.
    let (lo, hi) = spec.bounds();
    let lo: Vec<f64> = lo.iter().chain(lo.iter()).copied().collect();
    let hi: Vec<f64> = hi.iter().chain(hi.iter()).copied().collect();
    let objective = |x: &DVector<f64>, order: Order| -> Result<optimizer::Eval> {
        let p = from_ends(x);
        let ev = accumulate(spec, series, &win, &p, order)?;
        let grad = if order >= Order::Gradient { ends_jacobian(&ev.grad) } else { ev.grad };
        let hess = if order >= Order::Hessian {
            let hj = DMatrix::from_fn(2 * d, 2 * d, |i, j| {
                let (r, c) = (ev.hess.row(i), j);
                let (a, b) = if c < d { (r[c], r[c + d]) } else { (r[c - d], -r[c]) };
                0.5 * (a + b)
            });
            let mut out = DMatrix::zeros(2 * d, 2 * d);
            for j in 0..2 * d {
                out.set_column(j, &ends_jacobian(&hj.column(j).into_owned()));
            }
            out
        } else {
            ev.hess
        };
        Ok(optimizer::Eval {
            value: ev.value,
            grad,
            hess,
        })
    };
    let mut x0 = to_ends(init);
    // fall back to a flat start when the supplied slope is not evaluable
    let start_ok = {
        let mut probe = x0.clone();
        for i in 0..2 * d {
            probe[i] = probe[i].clamp(lo[i], hi[i]);
        }
        objective(&probe, Order::Value).map(|e| e.value.is_finite()).unwrap_or(false)
    };
    if !start_ok {
        let mut level = init.eta1.clone();
        spec.project(level.as_mut_slice());
        x0 = to_ends(&LocalParams::constant(level));
    }
    let out = optimizer::maximize(objective, x0, h0, &lo, &hi, optimizer::Options::default())?;
    let fit = LocalFit {
        tau,
        h,
        params: from_ends(&out.x),
        loglik: out.value,
        grad_norm: out.grad_norm,
        iterations: out.iterations,
        converged: out.converged,
        history: out.history,
    };
    Ok((fit, out.hess))
}

/// Grid traversal order for warm starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sweep {
    #[default]
    Forward,
    Backward,
}

/// Estimated curve at `h` and `h / sqrt(2)` with its jackknife combination.
#[derive(Debug, Clone)]
pub struct CurveFit {
    pub grid: Vec<f64>,
    pub fits: Vec<LocalFit>,
    pub fits_half: Vec<LocalFit>,
    /// `2 theta^_{h/sqrt2} - theta^_h` where both fits converged.
    pub bias_corrected: Vec<Option<DVector<f64>>>,
    pub h_used: Bandwidth,
    pub h_half: Bandwidth,
    /// Sample size `T` of the fitted series.
    pub n_obs: usize,
}

impl CurveFit {
    /// Grid points where either fit failed to converge.
    pub fn failures(&self) -> Vec<f64> {
        self.grid
            .iter()
            .zip(self.fits.iter().zip(&self.fits_half))
            .filter(|(_, (a, b))| !(a.converged && b.converged))
            .map(|(t, _)| *t)
            .collect()
    }

    pub fn all_converged(&self) -> bool {
        self.bias_corrected.iter().all(Option::is_some)
    }

    /// `theta^_h` along the grid.
    pub fn theta_hat(&self) -> Vec<DVector<f64>> {
        self.fits.iter().map(|f| f.params.eta1.clone()).collect()
    }
}

fn sweep_order(g: usize, sweep: Sweep) -> Vec<usize> {
    match sweep {
        Sweep::Forward => (0..g).collect(),
        Sweep::Backward => (0..g).rev().collect(),
    }
}

/// Local fits at `h` along `grid`, each warm-started from the previous
/// converged fit and its Hessian, with a fresh least-squares restart on
/// failure. Results are aligned with `grid`.
pub(crate) fn fit_chain(
    spec: &ModelSpec,
    series: &Series,
    grid: &[f64],
    h: Bandwidth,
    sweep: Sweep,
) -> Result<Vec<(LocalFit, DMatrix<f64>)>> {
    let mut fits: Vec<Option<(LocalFit, DMatrix<f64>)>> = vec![None; grid.len()];
    let mut prev: Option<(LocalParams, DMatrix<f64>)> = None;
    for i in sweep_order(grid.len(), sweep) {
        let tau = grid[i];
        let (init, h0) = match &prev {
            Some((p, hs)) => (p.clone(), Some(hs.clone())),
            None => (preliminary_init(spec, series, tau, h)?, None),
        };
        let (mut fit, mut hess) = fit_local_warm(spec, series, tau, h, &init, h0, None)?;
        if !fit.converged && prev.is_some() {
            // retry from a fresh least-squares start
            if let Ok(fresh) = preliminary_init(spec, series, tau, h) {
                let (alt, alt_hess) = fit_local_warm(spec, series, tau, h, &fresh, None, None)?;
                if alt.converged || alt.loglik > fit.loglik {
                    fit = alt;
                    hess = alt_hess;
                }
            }
        }
        prev = fit.converged.then(|| (fit.params.clone(), hess.clone()));
        fits[i] = Some((fit, hess));
    }
    Ok(fits.into_iter().map(|f| f.expect("every grid point fitted")).collect())
}

/// Local fits along `grid` at `h` and `h / sqrt(2)`, warm-started from the
/// neighbouring grid point, combined by the jackknife.
pub fn fit_curve(spec: &ModelSpec, series: &Series, grid: &[f64], h: Bandwidth) -> Result<CurveFit> {
    fit_curve_with(spec, series, grid, h, Sweep::Forward)
}

pub fn fit_curve_with(
    spec: &ModelSpec,
    series: &Series,
    grid: &[f64],
    h: Bandwidth,
    sweep: Sweep,
) -> Result<CurveFit> {
    check_inputs(spec, series)?;
    if grid.is_empty() || grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::Precondition("grid must be a nonempty subset of [0, 1]".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition("grid must be strictly increasing".into()));
    }
    let hh = h.halved();
    let g = grid.len();
    let order = sweep_order(g, sweep);
    let fits: Vec<LocalFit> = fit_chain(spec, series, grid, h, sweep)?.into_iter().map(|(f, _)| f).collect();
    let mut fits_half: Vec<Option<LocalFit>> = vec![None; g];
    let mut prev: Option<(LocalParams, DMatrix<f64>)> = None;
    for &i in &order {
        let f = &fits[i];
        let (init, h0) = match &prev {
            Some((p, hs)) => (p.clone(), Some(hs.clone())),
            None => (f.params.rescaled(h, hh), None),
        };
        let (mut fh, mut hess) = fit_local_warm(spec, series, f.tau, hh, &init, h0, None)?;
        let retry = |fh: &mut LocalFit, hess: &mut DMatrix<f64>, start: &LocalParams| -> Result<()> {
            let (alt, alt_hess) = fit_local_warm(spec, series, f.tau, hh, start, None, None)?;
            if alt.converged || alt.loglik > fh.loglik {
                *fh = alt;
                *hess = alt_hess;
            }
            Ok(())
        };
        if !fh.converged && prev.is_some() {
            retry(&mut fh, &mut hess, &f.params.rescaled(h, hh))?;
        }
        if !fh.converged {
            if let Ok(fresh) = preliminary_init(spec, series, f.tau, hh) {
                retry(&mut fh, &mut hess, &fresh)?;
            }
        }
        prev = fh.converged.then(|| (fh.params.clone(), hess));
        fits_half[i] = Some(fh);
    }
    let fits_half: Vec<LocalFit> = fits_half.into_iter().map(|f| f.expect("every grid point fitted")).collect();
    let bias_corrected = fits
        .iter()
        .zip(&fits_half)
        .map(|(a, b)| {
            (a.converged && b.converged).then(|| &b.params.eta1 * 2.0 - &a.params.eta1)
        })
        .collect();
    Ok(CurveFit {
        grid: grid.to_vec(),
        fits,
        fits_half,
        bias_corrected,
        h_used: h,
        h_half: hh,
        n_obs: series.len(),
    })
}

/// Whether every `eta1 + u eta2` over the window satisfies the parameter
/// invariants.
pub fn window_valid(spec: &ModelSpec, n: usize, params: &LocalParams, tau: f64, h: Bandwidth) -> bool {
    window(n, tau, h.value(), None)
        .iter()
        .all(|&(_, _, u)| validate_theta(spec, params.at(u).as_slice()).is_ok())
}

/// Sandwich covariance ingredients at one grid point.
#[derive(Debug, Clone)]
pub struct CovEstimate {
    /// Kernel-weighted mean Hessian.
    pub sigma_hat: DMatrix<f64>,
    /// Kernel-weighted mean outer product of scores.
    pub omega_hat: DMatrix<f64>,
    /// `Sigma^{-1} Omega Sigma^{-1}`.
    pub sigma_theta: DMatrix<f64>,
    /// Set when eigenvalue clamping was needed to invert `sigma_hat`.
    pub near_singular: bool,
}

/// Local-constant sandwich covariance at `theta_hat`.
pub fn sandwich_cov(
    spec: &ModelSpec,
    series: &Series,
    tau: f64,
    h: Bandwidth,
    theta_hat: &[f64],
) -> Result<CovEstimate> {
    check_inputs(spec, series)?;
    let d = spec.dim();
    if theta_hat.len() != d {
        return Err(Error::InvalidParams(format!("expected {d} parameters")));
    }
    let win = window(series.len(), tau, h.value(), None);
    if win.is_empty() {
        return Err(Error::EmptyWindow { tau });
    }
    let t_lo = win[0].0;
    let t_hi = win[win.len() - 1].0;
    let weight: std::collections::HashMap<usize, f64> = win.iter().map(|&(t, w, _)| (t, w)).collect();
    let start = match spec.horizon {
        Some(l) if l > 0 => t_lo.saturating_sub(l - 1).max(1),
        _ => 1,
    };
    let mut ws = Workspace::new(spec);
    let mut hsum = DMatrix::<f64>::zeros(d, d);
    let mut osum = DMatrix::<f64>::zeros(d, d);
    let mut wsum = 0.0;
    let mut sink = |t: usize, o: &ObsOut| {
        let Some(&w) = weight.get(&t) else { return };
        wsum += w;
        for i in 0..d {
            for j in 0..d {
                hsum[(i, j)] += w * o.hess[i * d + j];
                osum[(i, j)] += w * o.grad[i] * o.grad[j];
            }
        }
    };
    ws.eval_range(spec, series, theta_hat, start, t_hi, t_lo, Order::Hessian, &mut sink)?;
    let sigma_hat = hsum / wsum;
    let omega_hat = osum / wsum;
    let sigma_hat = (&sigma_hat + sigma_hat.transpose()) * 0.5;
    let omega_hat = (&omega_hat + omega_hat.transpose()) * 0.5;
    let eig = sigma_hat.clone().symmetric_eigen();
    let scale = eig.eigenvalues.amax();
    let floor = 1e-10 * scale;
    let mut near_singular = false;
    let inv_vals = eig.eigenvalues.map(|v| {
        if v.abs() < floor || v.abs() == 0.0 {
            near_singular = true;
            let s = if v < 0.0 { -1.0 } else { 1.0 };
            1.0 / (s * floor.max(f64::MIN_POSITIVE))
        } else {
            1.0 / v
        }
    });
    let inv = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    let st = &inv * &omega_hat * &inv;
    let sigma_theta = (&st + st.transpose()) * 0.5;
    Ok(CovEstimate {
        sigma_hat,
        omega_hat,
        sigma_theta,
        near_singular,
    })
}
