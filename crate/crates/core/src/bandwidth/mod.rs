//! Leave-one-out cross-validation for the bandwidth.
//!
//! The criterion at `h` is the average held-out log-likelihood
//! `T^{-1} sum_t l(x_t, z_{t-1}; theta^_{h,-t}(tau_t))`, where
//! `theta^_{h,-t}` maximizes the local likelihood with observation `t`
//! given zero weight. The bias-corrected estimator then uses `2 h^`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimate::{check_inputs, fit_chain, fit_local_warm, Sweep};
use crate::kernels::Bandwidth;
use crate::models::{loglik_at, ModelSpec, ParamPoint, Series};

/// Cross-validation criterion at one bandwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvScore {
    /// Mean held-out log-likelihood over the retained indices.
    pub value: f64,
    pub used: usize,
    /// Indices whose leave-one-out fit failed.
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    /// Ascending; only candidates with a defined score.
    pub candidates: Vec<f64>,
    pub scores: Vec<f64>,
    /// Candidates whose score was undefined.
    pub failed: Vec<f64>,
    pub h_hat: f64,
    pub h_tilde: f64,
}

/// Eight log-spaced values in `[0.1, 0.45]`, keeping those with `2h < 0.5`.
pub fn default_candidates() -> Vec<f64> {
    let (a, b) = (0.1f64, 0.45f64);
    (0..8)
        .map(|i| a * (b / a).powf(i as f64 / 7.0))
        .filter(|h| 2.0 * h < 0.5)
        .collect()
}

/// Held-out indices `t0, t0 + stride, ...` with `t0` centred in the first
/// block; `stride = 1` visits every observation.
fn held_out(n: usize, stride: usize) -> Vec<usize> {
    ((stride + 1) / 2..=n).step_by(stride).collect()
}

/// Leave-one-out criterion at `h` over every `stride`-th observation.
/// Each left-out fit starts from the full-sample fit at `tau_t`.
pub fn cv_score(spec: &ModelSpec, series: &Series, h: Bandwidth, stride: usize) -> Result<CvScore> {
    check_inputs(spec, series)?;
    let n = series.len();
    if h.value() < 2.0 / n as f64 {
        return Err(Error::Precondition(format!("h = {} below 2/T", h.value())));
    }
    if stride == 0 {
        return Err(Error::Precondition("stride must be at least 1".into()));
    }
    let idx = held_out(n, stride);
    let taus: Vec<f64> = idx.iter().map(|&t| series.tau(t)).collect();
    let full = fit_chain(spec, series, &taus, h, Sweep::Forward)?;
    let held: Vec<Option<f64>> = idx
        .par_iter()
        .zip(full.par_iter())
        .map(|(&t, (fit, hess))| {
            let (loo, _) =
                fit_local_warm(spec, series, fit.tau, h, &fit.params, Some(hess.clone()), Some(t)).ok()?;
            if !loo.converged {
                return None;
            }
            let theta = ParamPoint::new(spec, loo.params.eta1.as_slice().to_vec()).ok()?;
            loglik_at(spec, series, t, &theta).ok().filter(|v| v.is_finite())
        })
        .collect();
    let kept: Vec<f64> = held.iter().flatten().copied().collect();
    let dropped = held.len() - kept.len();
    let value = if kept.is_empty() {
        f64::NAN
    } else {
        kept.iter().sum::<f64>() / kept.len() as f64
    };
    Ok(CvScore { value, used: kept.len(), dropped })
}

/// Index of the largest score; ties go to the later (larger) entry.
fn argmax_last(scores: &[f64]) -> Option<usize> {
    scores
        .iter()
        .enumerate()
        .fold(None, |best: Option<usize>, (i, &s)| match best {
            Some(b) if scores[b] > s => Some(b),
            _ => Some(i),
        })
}

/// Maximizes [`cv_score`] over `candidates`. Candidates with `2h >= 0.5`
/// are excluded before any fitting.
pub fn select_bandwidth(spec: &ModelSpec, series: &Series, candidates: &[f64], stride: usize) -> Result<CvResult> {
    if candidates.is_empty() {
        return Err(Error::Precondition("no candidate bandwidth".into()));
    }
    let n = series.len() as f64;
    if let Some(h) = candidates.iter().find(|&&h| !(h >= 2.0 / n)) {
        return Err(Error::Precondition(format!("candidate h = {h} below 2/T")));
    }
    let mut hs: Vec<f64> = candidates.iter().copied().filter(|h| 2.0 * h < 0.5).collect();
    hs.sort_by(f64::total_cmp);
    hs.dedup();
    if hs.is_empty() {
        return Err(Error::Precondition("every candidate has 2h >= 0.5".into()));
    }
    let scores: Vec<Option<f64>> = hs
        .par_iter()
        .map(|&h| {
            let s = cv_score(spec, series, Bandwidth::new(h).ok()?, stride).ok()?;
            s.value.is_finite().then_some(s.value)
        })
        .collect();
    let mut out_h = Vec::new();
    let mut out_s = Vec::new();
    let mut failed = Vec::new();
    for (h, s) in hs.into_iter().zip(scores) {
        match s {
            Some(s) => {
                out_h.push(h);
                out_s.push(s);
            }
            None => failed.push(h),
        }
    }
    let best = argmax_last(&out_s).ok_or(Error::AllCandidatesFailed)?;
    let h_hat = out_h[best];
    Ok(CvResult {
        candidates: out_h,
        scores: out_s,
        failed,
        h_hat,
        h_tilde: 2.0 * h_hat,
    })
}

#[cfg(test)]
mod tests;
