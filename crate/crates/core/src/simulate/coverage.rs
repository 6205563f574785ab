//! Monte Carlo coverage of the simultaneous confidence bands.

use std::time::{Duration, Instant};

use nalgebra::DVector;
use rayon::prelude::*;

use super::{derive_seed, simulate_dgp, DgpSpec};
use crate::error::{Error, Result};
use crate::inference::{multiplier_sups, Band, BandFit, SelectionMatrix};
use crate::kernels::Bandwidth;
use crate::models::ParamGroup;

/// Settings for [`coverage_study`].
#[derive(Debug, Clone)]
pub struct CoverageConfig {
    /// Sample size `T`.
    pub n: usize,
    /// Bandwidths used in the band construction.
    pub h_list: Vec<f64>,
    /// Nominal levels are `1 - alpha`.
    pub alphas: Vec<f64>,
    pub reps: usize,
    /// Multiplier draws per band.
    pub r: usize,
    pub seed: u64,
    /// Spacing of the evaluation grid on `[h, 1 - h]`.
    pub grid_step: f64,
    /// Latent-state horizon of the fitted model (see `ModelSpec::horizon`).
    pub horizon: Option<usize>,
    /// Coefficient groups; `None` uses the model's layout groups.
    pub groups: Option<Vec<ParamGroup>>,
}

impl CoverageConfig {
    pub fn new(n: usize, h_list: Vec<f64>, reps: usize, r: usize, seed: u64) -> Self {
        Self {
            n,
            h_list,
            alphas: vec![0.10, 0.05],
            reps,
            r,
            seed,
            grid_step: 0.01,
            horizon: None,
            groups: None,
        }
    }
}

/// Empirical coverage of one group at one bandwidth and level.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCoverage {
    pub group: String,
    pub h: f64,
    pub alpha: f64,
    /// Average over replications and group elements of the indicator that
    /// the element's true curve stays inside its band on the whole grid.
    pub coverage: f64,
}

#[derive(Debug, Clone)]
pub struct CoverageReport {
    pub dgp: String,
    pub n: usize,
    pub h_list: Vec<f64>,
    pub alphas: Vec<f64>,
    pub r: usize,
    pub reps: usize,
    /// Replications dropped after a failed simulation or fit.
    pub dropped: usize,
    /// Ordered by `h`, then group, then `alpha`.
    pub cells: Vec<GroupCoverage>,
    pub wall_clock: Duration,
}

impl CoverageReport {
    /// Replications that entered the averages.
    pub fn used(&self) -> usize {
        self.reps - self.dropped
    }

    /// At most 5% of the replications were dropped.
    pub fn is_valid(&self) -> bool {
        self.dropped * 20 <= self.reps
    }

    pub fn get(&self, group: &str, h: f64, alpha: f64) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.group == group && (c.h - h).abs() < 1e-12 && (c.alpha - alpha).abs() < 1e-12)
            .map(|c| c.coverage)
    }
}

/// `h, h + step, ..., 1 - h`.
pub fn interior_grid(h: f64, step: f64) -> Vec<f64> {
    let span = 1.0 - 2.0 * h;
    let pts = (span / step + 1e-9).floor() as usize;
    let mut grid: Vec<f64> = (0..=pts).map(|i| h + step * i as f64).collect();
    if span - step * pts as f64 > 1e-9 {
        grid.push(1.0 - h);
    }
    grid
}

/// Per-replication coverage fractions, indexed `[h][group][alpha]`.
type RepOutcome = Vec<Vec<Vec<f64>>>;

/// Simulates `reps` paths, builds the band for every group, bandwidth and
/// level, and averages the element-wise containment of the true curve.
pub fn coverage_study(dgp: &DgpSpec, config: &CoverageConfig) -> Result<CoverageReport> {
    if config.reps < 50 {
        return Err(Error::Precondition(format!("coverage needs at least 50 replications, got {}", config.reps)));
    }
    if config.r < 100 {
        return Err(Error::InsufficientReplications(config.r));
    }
    if config.alphas.is_empty() || config.alphas.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
        return Err(Error::Precondition("levels alpha must lie in (0, 1]".into()));
    }
    if !(config.grid_step > 0.0) {
        return Err(Error::Precondition("grid step must be positive".into()));
    }
    let bandwidths = config
        .h_list
        .iter()
        .map(|&h| {
            if h >= 0.5 {
                return Err(Error::InvalidBandwidth(h));
            }
            Bandwidth::new(h)
        })
        .collect::<Result<Vec<_>>>()?;
    if bandwidths.is_empty() {
        return Err(Error::Precondition("no bandwidth given".into()));
    }
    let model = dgp.model.clone().with_horizon(config.horizon);
    let groups = config.groups.clone().unwrap_or_else(|| model.groups());
    let d = model.dim();
    let selections = groups
        .iter()
        .map(|g| SelectionMatrix::coordinates(d, &g.indices))
        .collect::<Result<Vec<_>>>()?;
    let grids: Vec<Vec<f64>> = bandwidths.iter().map(|h| interior_grid(h.value(), config.grid_step)).collect();
    let truths: Vec<Vec<DVector<f64>>> = grids
        .iter()
        .map(|grid| grid.iter().map(|&t| dgp.theta(t)).collect())
        .collect();

    let start = Instant::now();
    let one = |rep: usize| -> Option<RepOutcome> {
        let seed = derive_seed(config.seed, rep as u64);
        let x = simulate_dgp(dgp, config.n, seed).ok()?;
        let mut out = Vec::with_capacity(bandwidths.len());
        for (hi, &h) in bandwidths.iter().enumerate() {
            let fit = BandFit::new(&model, &x, &grids[hi], h).ok()?;
            if !fit.curve.all_converged() {
                return None;
            }
            let weights = fit.weights().ok()?;
            let interior = fit.interior();
            // one bootstrap per distinct rank, shared by groups of that rank
            let mut sups_by_k: Vec<(usize, Vec<f64>)> = Vec::new();
            let mut per_group = Vec::with_capacity(groups.len());
            for c in &selections {
                let k = c.rank();
                if !sups_by_k.iter().any(|(kk, _)| *kk == k) {
                    let s = multiplier_sups(&weights, k, config.r, derive_seed(seed, (1000 * hi + k) as u64)).ok()?;
                    sups_by_k.push((k, s));
                }
                let sups = &sups_by_k.iter().find(|(kk, _)| *kk == k)?.1;
                let truth: Vec<DVector<f64>> = interior.iter().map(|&i| c.matrix() * &truths[hi][i]).collect();
                let mut per_alpha = Vec::with_capacity(config.alphas.len());
                for &alpha in &config.alphas {
                    let band = Band::from_sups(&fit, c, alpha, sups).ok()?;
                    let inside = band.covers(&truth);
                    per_alpha.push(inside.iter().filter(|b| **b).count() as f64 / inside.len() as f64);
                }
                per_group.push(per_alpha);
            }
            out.push(per_group);
        }
        Some(out)
    };
    let outcomes: Vec<Option<RepOutcome>> = (0..config.reps).into_par_iter().map(one).collect();
    let wall_clock = start.elapsed();

    let kept: Vec<&RepOutcome> = outcomes.iter().flatten().collect();
    let dropped = config.reps - kept.len();
    let mut cells = Vec::new();
    for (hi, h) in bandwidths.iter().enumerate() {
        for (gi, g) in groups.iter().enumerate() {
            for (ai, &alpha) in config.alphas.iter().enumerate() {
                let sum: f64 = kept.iter().map(|o| o[hi][gi][ai]).sum();
                cells.push(GroupCoverage {
                    group: g.name.clone(),
                    h: h.value(),
                    alpha,
                    coverage: if kept.is_empty() { f64::NAN } else { sum / kept.len() as f64 },
                });
            }
        }
    }
    Ok(CoverageReport {
        dgp: dgp.name.clone(),
        n: config.n,
        h_list: config.h_list.clone(),
        alphas: config.alphas.clone(),
        r: config.r,
        reps: config.reps,
        dropped,
        cells,
        wall_clock,
    })
}
