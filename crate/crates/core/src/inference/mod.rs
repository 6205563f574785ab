//! Pointwise intervals, the multiplier-bootstrap simultaneous confidence
//! band and the analytic Gumbel band for the coefficient curves.
//!
//! The band at level `1 - alpha` for `theta_C = C theta` is
//!
//! ```text
//! theta~_C(tau) + Sigma_C^{1/2}(tau) q^_{1-alpha} B_k,   tau in [h, 1 - h]
//! ```
//!
//! where `q^` is an empirical quantile of `sup_tau |V*(tau)|` with
//! `V*(tau) = T^{-1} sum_t v_t (2 omega_{t,h/sqrt2}(tau) - omega_{t,h}(tau))`
//! and `v_t` i.i.d. standard normal `k`-vectors.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::estimate::{fit_curve, sandwich_cov, CovEstimate, CurveFit};
use crate::kernels::{Bandwidth, KernelSpec};
use crate::models::{ModelSpec, Series};
use crate::simulate::rng_for;

/// A full-row-rank `k x d` matrix selecting the parameters of interest.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionMatrix {
    c: DMatrix<f64>,
}

impl SelectionMatrix {
    pub fn new(c: DMatrix<f64>) -> Result<Self> {
        if c.nrows() == 0 || c.nrows() > c.ncols() {
            return Err(Error::Precondition(format!(
                "selection matrix must have 1..=d rows, got {}x{}",
                c.nrows(),
                c.ncols()
            )));
        }
        let smin = c.clone().svd(false, false).singular_values.min();
        if !(smin > 1e-10) {
            return Err(Error::Precondition("selection matrix is not of full row rank".into()));
        }
        Ok(Self { c })
    }

    /// Rows `e_i'` for each listed coordinate of a `d`-vector.
    pub fn coordinates(d: usize, indices: &[usize]) -> Result<Self> {
        if indices.iter().any(|&i| i >= d) {
            return Err(Error::Precondition(format!("coordinate index out of range 0..{d}")));
        }
        Self::new(DMatrix::from_fn(indices.len(), d, |r, c| f64::from(u8::from(indices[r] == c))))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.c
    }

    /// `k`.
    pub fn rank(&self) -> usize {
        self.c.nrows()
    }

    pub fn dim(&self) -> usize {
        self.c.ncols()
    }
}

/// I.i.d. standard normal multipliers `v_1..v_T` (`k`-vectors), drawn from
/// stream `stream` of `seed`.
#[derive(Debug, Clone)]
pub struct MultiplierDraw {
    /// Row-major `T x k`.
    pub v: Vec<f64>,
    pub k: usize,
    pub seed: u64,
    pub stream: u64,
}

impl MultiplierDraw {
    pub fn new(k: usize, n: usize, seed: u64, stream: u64) -> Self {
        let mut rng = rng_for(seed, stream);
        let v = (0..n * k).map(|_| StandardNormal.sample(&mut rng)).collect();
        Self { v, k, seed, stream }
    }

    pub fn len(&self) -> usize {
        self.v.len() / self.k.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }
}

/// Combined jackknife weights `2 omega_{t,h/sqrt2}(tau) - omega_{t,h}(tau)` on
/// a grid, stored sparsely as `(t - 1, weight)`.
#[derive(Debug, Clone)]
pub struct BandWeights {
    pub grid: Vec<f64>,
    pub n_obs: usize,
    weights: Vec<Vec<(usize, f64)>>,
}

impl BandWeights {
    pub fn new(grid: &[f64], h: Bandwidth, n: usize) -> Result<Self> {
        let k = KernelSpec::EPANECHNIKOV;
        let weights = grid
            .iter()
            .map(|&tau| {
                let full = k.local_linear_weights(tau, h, n)?;
                let half = k.local_linear_weights(tau, h.halved(), n)?;
                Ok(full
                    .weights
                    .iter()
                    .zip(&half.weights)
                    .enumerate()
                    .filter(|(_, (a, b))| **a != 0.0 || **b != 0.0)
                    .map(|(i, (a, b))| (i, 2.0 * b - a))
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid: grid.to_vec(),
            n_obs: n,
            weights,
        })
    }

    /// Builds weights directly from sparse `(t - 1, weight)` lists.
    pub fn from_sparse(grid: Vec<f64>, n_obs: usize, weights: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        if grid.len() != weights.len() || weights.iter().flatten().any(|&(i, _)| i >= n_obs) {
            return Err(Error::Precondition("weights do not match grid or sample size".into()));
        }
        Ok(Self { grid, n_obs, weights })
    }
}

/// `max_tau |V*(tau)|` for one multiplier draw.
pub fn multiplier_sup(weights: &BandWeights, draw: &MultiplierDraw) -> f64 {
    let k = draw.k;
    let n = weights.n_obs as f64;
    let mut acc = vec![0.0; k];
    let mut best = 0.0f64;
    for row in &weights.weights {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for &(i, w) in row {
            for (a, v) in acc.iter_mut().zip(&draw.v[i * k..(i + 1) * k]) {
                *a += w * v;
            }
        }
        let norm = acc.iter().map(|a| a * a).sum::<f64>().sqrt() / n;
        best = best.max(norm);
    }
    best
}

/// `r` multiplier sups for `k`-vectors, draw `j` from stream `j` of `seed`,
/// sorted ascending.
pub fn multiplier_sups(weights: &BandWeights, k: usize, r: usize, seed: u64) -> Result<Vec<f64>> {
    if r < 100 {
        return Err(Error::InsufficientReplications(r));
    }
    let mut sups: Vec<f64> = (0..r as u64)
        .into_par_iter()
        .map(|j| multiplier_sup(weights, &MultiplierDraw::new(k, weights.n_obs, seed, j)))
        .collect();
    sups.sort_by(f64::total_cmp);
    Ok(sups)
}

/// Linear-interpolation (type 7) quantile of ascending `sorted` at `p`.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let pos = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Symmetric PSD square root, negative eigenvalues clipped to zero.
pub fn psd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let r = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    (&r + r.transpose()) * 0.5
}

/// Pointwise interval for every coordinate at one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseInterval {
    pub tau: f64,
    pub center: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

/// `theta~_i(tau) +- z_{1-alpha/2} sqrt(v0 [Sigma_theta]_ii / (T h))` at every
/// grid point where the bias-corrected estimate exists; `covs` is aligned with
/// `curve.grid`.
pub fn pointwise_ci(curve: &CurveFit, covs: &[CovEstimate], alpha: f64) -> Result<Vec<PointwiseInterval>> {
    if covs.len() != curve.grid.len() {
        return Err(Error::Precondition("one covariance per grid point required".into()));
    }
    if !(0.0..=1.0).contains(&alpha) || alpha == 0.0 {
        return Err(Error::Precondition(format!("alpha = {alpha} outside (0, 1]")));
    }
    let z = Normal::standard().inverse_cdf(1.0 - alpha / 2.0);
    let v0 = KernelSpec::EPANECHNIKOV.fourth_order_energy();
    let th = curve.n_obs as f64 * curve.h_used.value();
    Ok(curve
        .grid
        .iter()
        .zip(&curve.bias_corrected)
        .zip(covs)
        .filter_map(|((&tau, center), cov)| {
            let center = center.as_ref()?;
            let half = DVector::from_fn(center.len(), |i, _| {
                z * (v0 * cov.sigma_theta[(i, i)].max(0.0) / th).sqrt()
            });
            Some(PointwiseInterval {
                tau,
                center: center.clone(),
                lower: center - &half,
                upper: center + &half,
            })
        })
        .collect())
}

/// Curve fit and sandwich covariances (at `theta^_h`) on a grid: the
/// data-dependent inputs of every band.
#[derive(Debug, Clone)]
pub struct BandFit {
    pub curve: CurveFit,
    /// Aligned with `curve.grid`.
    pub covs: Vec<CovEstimate>,
}

impl BandFit {
    pub fn new(spec: &ModelSpec, series: &Series, grid: &[f64], h: Bandwidth) -> Result<Self> {
        let curve = fit_curve(spec, series, grid, h)?;
        let covs = curve
            .fits
            .iter()
            .map(|f| sandwich_cov(spec, series, f.tau, h, f.params.eta1.as_slice()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { curve, covs })
    }

    /// Grid indices inside `[h, 1 - h]`.
    pub fn interior(&self) -> Vec<usize> {
        interior_indices(&self.curve.grid, self.curve.h_used)
    }

    /// Combined jackknife weights on the interior grid.
    pub fn weights(&self) -> Result<BandWeights> {
        let grid: Vec<f64> = self.interior().iter().map(|&i| self.curve.grid[i]).collect();
        BandWeights::new(&grid, self.curve.h_used, self.curve.n_obs)
    }
}

pub(crate) fn interior_indices(grid: &[f64], h: Bandwidth) -> Vec<usize> {
    let hv = h.value();
    grid.iter()
        .enumerate()
        .filter(|(_, &t)| t >= hv - 1e-12 && t <= 1.0 - hv + 1e-12)
        .map(|(i, _)| i)
        .collect()
}

/// A simultaneous confidence band on the interior grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub grid: Vec<f64>,
    /// `theta~_C(tau)`.
    pub center: Vec<DVector<f64>>,
    pub q_hat: f64,
    /// `Sigma_C^{1/2}(tau)`.
    pub sigma_c_sqrt: Vec<DMatrix<f64>>,
    pub alpha: f64,
    pub replications: usize,
    pub h: Bandwidth,
}

impl Band {
    /// Assembles the band from a fit and ascending multiplier sups.
    pub fn from_sups(fit: &BandFit, c: &SelectionMatrix, alpha: f64, sups: &[f64]) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Precondition(format!("alpha = {alpha} outside (0, 1]")));
        }
        if sups.len() < 100 {
            return Err(Error::InsufficientReplications(sups.len()));
        }
        let d = fit.curve.fits.first().map_or(0, |f| f.params.eta1.len());
        if c.dim() != d {
            return Err(Error::Precondition(format!("selection matrix has {} columns, model has {d}", c.dim())));
        }
        let interior = fit.interior();
        if interior.is_empty() {
            return Err(Error::Precondition("no grid point inside [h, 1 - h]".into()));
        }
        let cm = c.matrix();
        let mut grid = Vec::with_capacity(interior.len());
        let mut center = Vec::with_capacity(interior.len());
        let mut sigma_c_sqrt = Vec::with_capacity(interior.len());
        for &i in &interior {
            let tau = fit.curve.grid[i];
            let theta = fit.curve.bias_corrected[i].as_ref().ok_or(Error::FitFailed { tau })?;
            grid.push(tau);
            center.push(cm * theta);
            sigma_c_sqrt.push(psd_sqrt(&(cm * &fit.covs[i].sigma_theta * cm.transpose())));
        }
        Ok(Self {
            grid,
            center,
            // the 0-quantile of a positive sup is 0 in the limit
            q_hat: if alpha >= 1.0 { 0.0 } else { quantile_type7(sups, 1.0 - alpha) },
            sigma_c_sqrt,
            alpha,
            replications: sups.len(),
            h: fit.curve.h_used,
        })
    }

    /// Per-coordinate half-widths `q^ |row_i(Sigma_C^{1/2})|` at grid index `j`
    /// (the interval projections of the ellipsoid).
    pub fn radius(&self, j: usize) -> DVector<f64> {
        let s = &self.sigma_c_sqrt[j];
        DVector::from_fn(s.nrows(), |i, _| self.q_hat * s.row(i).norm())
    }

    pub fn lower(&self, j: usize) -> DVector<f64> {
        &self.center[j] - self.radius(j)
    }

    pub fn upper(&self, j: usize) -> DVector<f64> {
        &self.center[j] + self.radius(j)
    }

    /// Whether each coordinate of `truth` (one `k`-vector per grid point)
    /// lies inside its interval projection at every grid point.
    pub fn covers(&self, truth: &[DVector<f64>]) -> Vec<bool> {
        let k = self.center.first().map_or(0, |c| c.len());
        let mut inside = vec![true; k];
        for (j, t) in truth.iter().enumerate().take(self.grid.len()) {
            let (lo, hi) = (self.lower(j), self.upper(j));
            for i in 0..k {
                inside[i] &= lo[i] <= t[i] && t[i] <= hi[i];
            }
        }
        inside
    }
}

/// Fits at `h` and `h / sqrt(2)`, applies the jackknife, estimates sandwich
/// covariances, draws `r` multiplier sups from `seed` and returns the band on
/// `grid` intersected with `[h, 1 - h]`.
#[allow(clippy::too_many_arguments)]
pub fn scb(
    spec: &ModelSpec,
    series: &Series,
    grid: &[f64],
    h: Bandwidth,
    c: &SelectionMatrix,
    alpha: f64,
    r: usize,
    seed: u64,
) -> Result<Band> {
    if r < 100 {
        return Err(Error::InsufficientReplications(r));
    }
    let fit = BandFit::new(spec, series, grid, h)?;
    let sups = multiplier_sups(&fit.weights()?, c.rank(), r, seed)?;
    Band::from_sups(&fit, c, alpha, &sups)
}

/// Per coordinate: can a horizontal line be embedded in the band?
pub fn constancy_test(band: &Band) -> Vec<bool> {
    let k = band.center.first().map_or(0, |c| c.len());
    (0..band.grid.len())
        .fold(vec![(f64::NEG_INFINITY, f64::INFINITY); k], |mut acc, j| {
            let (lo, hi) = (band.lower(j), band.upper(j));
            for i in 0..k {
                acc[i].0 = acc[i].0.max(lo[i]);
                acc[i].1 = acc[i].1.min(hi[i]);
            }
            acc
        })
        .into_iter()
        .map(|(max_lo, min_hi)| max_lo <= min_hi)
        .collect()
}

/// Gumbel critical value `B(1/h) + u_alpha / sqrt(2 log(1/h))` for the
/// normalized sup deviation `sqrt(T h / v~0) sup |Sigma_C^{-1/2}(...)|`.
pub fn analytic_band_quantile(h: f64, k: usize, alpha: f64, kernel: &KernelSpec) -> Result<f64> {
    if !(h > 0.0 && h < (-1.0f64).exp()) {
        return Err(Error::Precondition(format!("h = {h} outside (0, 1/e)")));
    }
    if k == 0 || !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Precondition("need k >= 1 and 0 < alpha < 1".into()));
    }
    let l = (1.0 / h).ln();
    let s = (2.0 * l).sqrt();
    let ck = (kernel.derivative_energy() / (kernel.moment(0, true) * std::f64::consts::PI)).sqrt()
        / gamma(k as f64 / 2.0);
    let b = s + (ck.ln() + (k as f64 / 2.0 - 0.5) * l.ln() - 2f64.ln()) / s;
    let u = -(-(1.0 - alpha).ln() / 2.0).ln();
    Ok(b + u / s)
}
