//! Data generation from time-varying VARMA and MGARCH processes, the
//! frozen-parameter stationary approximation, and the Monte Carlo coverage
//! harness.

mod coverage;

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::models::{Family, ModelSpec, Series};

pub use coverage::{coverage_study, interior_grid, CoverageConfig, CoverageReport, GroupCoverage};

/// Parameter curve `tau -> theta(tau)` in the layout of a [`ModelSpec`].
pub type Curve = Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>;

/// A data-generating process with closed-form coefficient curves.
#[derive(Clone)]
pub struct DgpSpec {
    pub name: String,
    pub model: ModelSpec,
    pub curve: Curve,
    /// Steps simulated at `theta(0)` before `t = 1`.
    pub burn_in: usize,
}

impl std::fmt::Debug for DgpSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DgpSpec")
            .field("name", &self.name)
            .field("model", &self.model)
            .field("burn_in", &self.burn_in)
            .finish()
    }
}

impl DgpSpec {
    pub fn new(name: impl Into<String>, model: ModelSpec, curve: Curve) -> Self {
        Self {
            name: name.into(),
            model,
            curve,
            burn_in: 500,
        }
    }

    pub fn with_burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = burn_in;
        self
    }

    /// `theta(tau)`.
    pub fn theta(&self, tau: f64) -> DVector<f64> {
        (self.curve)(tau)
    }

    /// Bivariate VARMA(2,1) in final-equations form:
    /// `a1 = 0.6 e^{tau-1}`, `a2 = -0.3 e^{tau-1}`, a smoothly varying MA
    /// matrix and Cholesky innovation factor.
    pub fn dgp1() -> Self {
        let model = ModelSpec::final_equations(2, 2, 1).expect("valid final-equations layout");
        let curve: Curve = Arc::new(|tau: f64| {
            let e = (tau - 1.0).exp();
            let off = -0.8 * (tau - 0.5).powi(2);
            let w = 0.2 * (0.5 - tau).exp();
            DVector::from_vec(vec![
                0.6 * e,
                -0.3 * e,
                // B1 column-major
                0.5 * (tau - 0.5).exp(),
                off,
                off,
                0.5 + 0.3 * (PI * tau).sin(),
                // omega_11, omega_21, omega_22
                1.5 + w,
                w,
                1.5 + 0.5 * (tau - 0.5).powi(2),
            ])
        });
        Self::new("dgp1", model, curve)
    }

    /// Bivariate GARCH(1,1) with constant-structure correlation
    /// `rho = 0.3 sin(tau)`.
    pub fn dgp2() -> Self {
        let model = ModelSpec::mgarch(2, 1, 1).expect("valid MGARCH layout");
        let curve: Curve = Arc::new(|tau: f64| {
            let off = 0.05 * (tau - 0.5).powi(2);
            DVector::from_vec(vec![
                2.0 * (0.5 * tau - 0.5).exp(),
                3.0 + 0.2 * tau.cos(),
                // C1 column-major
                0.4 + 0.05 * tau.cos(),
                off,
                off,
                0.4 + 0.05 * tau.sin(),
                // D1 column-major
                0.4 - 0.1 * tau.cos(),
                0.0,
                0.0,
                0.3 - 0.1 * tau.sin(),
                0.3 * tau.sin(),
            ])
        });
        Self::new("dgp2", model, curve)
    }

    /// Same process with every curve frozen at `tau`.
    pub fn frozen(&self, tau: f64) -> Self {
        let theta = self.theta(tau);
        Self {
            name: format!("{}@{tau}", self.name),
            model: self.model.clone(),
            curve: Arc::new(move |_| theta.clone()),
            burn_in: self.burn_in,
        }
    }
}

/// Deterministic ChaCha8 generator for `(seed, stream)`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a base seed with an index (splitmix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard normal innovations for `burn_in + n` steps, in time order.
fn innovations(m: usize, steps: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_for(seed, 0);
    (0..m * steps).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Coefficients of one step, unpacked into dense column-major blocks.
struct StepCoef {
    level: Vec<f64>,
    input: Vec<f64>,
    state: Vec<f64>,
    /// Innovation factor: `omega` (VARMA) or the symmetric root of the
    /// correlation matrix (MGARCH).
    root: Vec<f64>,
}

fn symmetric_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = a.clone().symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

impl StepCoef {
    fn new(model: &ModelSpec, theta: &[f64]) -> Self {
        let flat = |mats: &[DMatrix<f64>]| mats.iter().flat_map(|a| a.iter().copied()).collect();
        match model.family {
            Family::Varma => {
                let c = model.varma_coefficients(theta);
                Self {
                    level: c.a.as_slice().to_vec(),
                    input: flat(&c.ar),
                    state: flat(&c.ma),
                    root: c.omega.as_slice().to_vec(),
                }
            }
            Family::Mgarch => {
                let c = model.garch_coefficients(theta);
                Self {
                    level: c.c0.as_slice().to_vec(),
                    input: flat(&c.arch),
                    state: flat(&c.garch),
                    root: symmetric_sqrt(&c.corr).as_slice().to_vec(),
                }
            }
        }
    }
}

/// Step-by-step simulator; `state` holds `eta_t` (VARMA) or `h_t` (MGARCH).
struct Simulator {
    m: usize,
    p: usize,
    q: usize,
    family: Family,
    x: Vec<f64>,
    state: Vec<f64>,
    len: usize,
}

#[inline]
fn gemv_add(a: &[f64], v: &[f64], out: &mut [f64], m: usize) {
    for c in 0..m {
        let vc = v[c];
        for r in 0..m {
            out[r] += a[c * m + r] * vc;
        }
    }
}

impl Simulator {
    fn new(model: &ModelSpec, steps: usize) -> Self {
        Self {
            m: model.m,
            p: model.p,
            q: model.q,
            family: model.family,
            x: Vec::with_capacity(model.m * steps),
            state: Vec::with_capacity(model.m * steps),
            len: 0,
        }
    }

    fn step(&mut self, c: &StepCoef, eps: &[f64]) -> Result<()> {
        let m = self.m;
        let mm = m * m;
        let mut xt = vec![0.0; m];
        let mut st = vec![0.0; m];
        let mut eta = vec![0.0; m];
        gemv_add(&c.root, eps, &mut eta, m);
        let n = self.len;
        match self.family {
            Family::Varma => {
                for i in 0..m {
                    xt[i] = c.level[i] + eta[i];
                    st[i] = eta[i];
                }
                for j in 1..=self.p.min(n) {
                    gemv_add(&c.input[(j - 1) * mm..j * mm], &self.x[(n - j) * m..(n - j + 1) * m], &mut xt, m);
                }
                for j in 1..=self.q.min(n) {
                    gemv_add(&c.state[(j - 1) * mm..j * mm], &self.state[(n - j) * m..(n - j + 1) * m], &mut xt, m);
                }
            }
            Family::Mgarch => {
                st.copy_from_slice(&c.level);
                let mut y = vec![0.0; m];
                for j in 1..=self.p.min(n) {
                    for (yi, xi) in y.iter_mut().zip(&self.x[(n - j) * m..(n - j + 1) * m]) {
                        *yi = xi * xi;
                    }
                    gemv_add(&c.input[(j - 1) * mm..j * mm], &y, &mut st, m);
                }
                for j in 1..=self.q.min(n) {
                    gemv_add(&c.state[(j - 1) * mm..j * mm], &self.state[(n - j) * m..(n - j + 1) * m], &mut st, m);
                }
                for i in 0..m {
                    xt[i] = st[i].max(0.0).sqrt() * eta[i];
                }
            }
        }
        self.len += 1;
        if xt.iter().any(|v| !(v.abs() <= 1e8)) {
            return Err(Error::ExplosivePath { t: self.len as i64 });
        }
        self.x.extend_from_slice(&xt);
        self.state.extend_from_slice(&st);
        Ok(())
    }
}

fn run(spec: &DgpSpec, n: usize, seed: u64, theta_at: &dyn Fn(usize) -> DVector<f64>) -> Result<Series> {
    if n < 50 {
        return Err(Error::Precondition(format!("T = {n} below 50")));
    }
    let m = spec.model.m;
    let steps = spec.burn_in + n;
    let eps = innovations(m, steps, seed);
    let mut sim = Simulator::new(&spec.model, steps);
    let coef0 = StepCoef::new(&spec.model, spec.theta(0.0).as_slice());
    for s in 0..steps {
        let e = &eps[s * m..(s + 1) * m];
        let res = if s < spec.burn_in {
            sim.step(&coef0, e)
        } else {
            let theta = theta_at(s - spec.burn_in + 1);
            sim.step(&StepCoef::new(&spec.model, theta.as_slice()), e)
        };
        res.map_err(|_| Error::ExplosivePath { t: s as i64 - spec.burn_in as i64 + 1 })?;
    }
    Series::new(m, sim.x[spec.burn_in * m..].to_vec())
}

/// Simulates `x_1..x_T` with `theta(tau_t)` at step `t` after a burn-in at
/// `theta(0)`.
pub fn simulate_dgp(spec: &DgpSpec, n: usize, seed: u64) -> Result<Series> {
    run(spec, n, seed, &|t| spec.theta(t as f64 / n as f64))
}

/// The stationary process frozen at `tau`, driven by the same innovations
/// as `simulate_dgp(spec, n, seed)`.
pub fn stationary_approx(spec: &DgpSpec, tau: f64, n: usize, seed: u64) -> Result<Series> {
    let theta = spec.theta(tau);
    let burn = spec.burn_in;
    let frozen = DgpSpec {
        name: spec.name.clone(),
        model: spec.model.clone(),
        curve: Arc::new(move |_| theta.clone()),
        burn_in: burn,
    };
    run(&frozen, n, seed, &|_| frozen.theta(tau))
}

/// `|x_t - x~_t(tau_t)|_inf` for `t = 1..T`, where `x~(tau_t)` is the frozen
/// process at `tau_t` coupled through the shared innovations (including the
/// burn-in).
pub fn coupled_gap(spec: &DgpSpec, n: usize, seed: u64) -> Result<Vec<f64>> {
    let x = simulate_dgp(spec, n, seed)?;
    let m = spec.model.m;
    let steps = spec.burn_in + n;
    let eps = innovations(m, steps, seed);
    let mut out = Vec::with_capacity(n);
    for t in 1..=n {
        let coef = StepCoef::new(&spec.model, spec.theta(t as f64 / n as f64).as_slice());
        let mut sim = Simulator::new(&spec.model, spec.burn_in + t);
        for s in 0..spec.burn_in + t {
            sim.step(&coef, &eps[s * m..(s + 1) * m])?;
        }
        let tilde = &sim.x[(spec.burn_in + t - 1) * m..];
        let gap = x
            .obs(t)
            .iter()
            .zip(tilde)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        out.push(gap);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
