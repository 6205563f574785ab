//! Forward state recursions with first and second parameter derivatives.

use nalgebra::DMatrix;

use super::gaussian::{assemble, GaussTerms, Scratch};
use super::{correlation_matrix, Family, ModelSpec, ObsOut, Order, Series};
use crate::error::{Error, Result};

/// A sparse unit-or-scaled entry of a coefficient direction matrix.
#[derive(Debug, Clone, Copy)]
struct Entry {
    lag: usize,
    row: usize,
    col: usize,
    val: f64,
}

#[derive(Debug, Clone, Default)]
struct Direction {
    intercept: Option<usize>,
    /// Entries of `dA_j` (VARMA) or `dC_j` (MGARCH).
    input: Vec<Entry>,
    /// Entries of `dB_j` (VARMA) or `dD_j` (MGARCH); these multiply the
    /// lagged latent state and generate second derivatives.
    state: Vec<Entry>,
}

/// Reusable buffers and precomputed derivative structure for one
/// [`ModelSpec`]. Not shared between threads; create one per worker.
#[derive(Debug, Clone)]
pub struct Workspace {
    m: usize,
    d: usize,
    /// Parameters entering the state recursion: `0..n_rec`.
    n_rec: usize,
    dirs: Vec<Direction>,
    /// Pairs `(k, l)`, `k <= l`, with a nonzero second state derivative.
    pairs: Vec<(usize, usize)>,
    ring: usize,
    // ring buffers indexed by slot
    state: Vec<f64>,
    dstate: Vec<f64>,
    d2state: Vec<f64>,
    // current-step buffers
    cur: Vec<f64>,
    dcur: Vec<f64>,
    d2cur: Vec<f64>,
    // unpacked coefficients (dense, column-major m x m per lag)
    a: Vec<f64>,
    ar: Vec<f64>,
    ma: Vec<f64>,
    cov: DMatrix<f64>,
    scratch: Scratch,
    // assembly buffers
    e: Vec<f64>,
    dmu: Vec<f64>,
    dm: Vec<f64>,
    d2mu: Vec<f64>,
    d2m: Vec<f64>,
    mu_idx: Vec<usize>,
    m_idx: Vec<usize>,
    d2mu_pairs: Vec<(usize, usize)>,
    d2m_pairs: Vec<(usize, usize)>,
    out: ObsOut,
}

impl Workspace {
    pub fn new(spec: &ModelSpec) -> Self {
        let m = spec.m;
        let mm = m * m;
        let d = spec.dim();
        let mut dirs = Vec::new();
        match spec.family {
            Family::Varma => {
                for i in 0..spec.n_intercept() {
                    dirs.push(Direction {
                        intercept: Some(i),
                        ..Default::default()
                    });
                }
                let nc = spec.n_coef();
                for k in 0..nc {
                    let col: Vec<(usize, f64)> = match &spec.restriction {
                        Some(r) => r
                            .matrix()
                            .column(k)
                            .iter()
                            .enumerate()
                            .filter(|(_, v)| **v != 0.0)
                            .map(|(i, v)| (i, *v))
                            .collect(),
                        None => vec![(k, 1.0)],
                    };
                    let mut dir = Direction::default();
                    for (idx, val) in col {
                        let block = idx / mm;
                        let within = idx % mm;
                        let e = Entry {
                            lag: if block < spec.p { block + 1 } else { block - spec.p + 1 },
                            row: within % m,
                            col: within / m,
                            val,
                        };
                        if block < spec.p {
                            dir.input.push(e);
                        } else {
                            dir.state.push(e);
                        }
                    }
                    dirs.push(dir);
                }
            }
            Family::Mgarch => {
                for i in 0..m {
                    dirs.push(Direction {
                        intercept: Some(i),
                        ..Default::default()
                    });
                }
                for j in 0..spec.p + spec.q {
                    for k in 0..mm {
                        let e = Entry {
                            lag: if j < spec.p { j + 1 } else { j - spec.p + 1 },
                            row: k % m,
                            col: k / m,
                            val: 1.0,
                        };
                        let mut dir = Direction::default();
                        if j < spec.p {
                            dir.input.push(e);
                        } else {
                            dir.state.push(e);
                        }
                        dirs.push(dir);
                    }
                }
            }
        }
        let n_rec = dirs.len();
        let mut pairs = Vec::new();
        for k in 0..n_rec {
            for l in k..n_rec {
                if !dirs[k].state.is_empty() || !dirs[l].state.is_empty() {
                    pairs.push((k, l));
                }
            }
        }
        let ring = spec.q + 1;
        let np = pairs.len();
        Self {
            m,
            d,
            n_rec,
            dirs,
            pairs,
            ring,
            state: vec![0.0; ring * m],
            dstate: vec![0.0; ring * n_rec * m],
            d2state: vec![0.0; ring * np * m],
            cur: vec![0.0; m],
            dcur: vec![0.0; n_rec * m],
            d2cur: vec![0.0; np * m],
            a: vec![0.0; m],
            ar: vec![0.0; spec.p * mm],
            ma: vec![0.0; spec.q * mm],
            cov: DMatrix::zeros(m, m),
            scratch: Scratch::new(m, d),
            e: vec![0.0; m],
            dmu: Vec::new(),
            dm: Vec::new(),
            d2mu: Vec::new(),
            d2m: Vec::new(),
            mu_idx: Vec::new(),
            m_idx: Vec::new(),
            d2mu_pairs: Vec::new(),
            d2m_pairs: Vec::new(),
            out: ObsOut::new(d),
        }
    }

    /// One observation with the recursion started at `spec.start_of(t)`.
    pub fn eval_obs(
        &mut self,
        spec: &ModelSpec,
        series: &Series,
        t: usize,
        theta: &[f64],
        order: Order,
        out: &mut ObsOut,
    ) -> Result<()> {
        let s0 = spec.start_of(t);
        let mut sink = |_: usize, o: &ObsOut| {
            out.loglik = o.loglik;
            if order >= Order::Gradient {
                out.grad.copy_from_slice(&o.grad);
            }
            if order >= Order::Hessian {
                out.hess.copy_from_slice(&o.hess);
            }
        };
        self.eval_range(spec, series, theta, s0, t, t, order, &mut sink)
    }

    /// Runs the recursion from `start` to `end` at a fixed `theta`, emitting
    /// contributions for `emit_from..=end`.
    #[allow(clippy::too_many_arguments)]
    pub fn eval_range(
        &mut self,
        spec: &ModelSpec,
        series: &Series,
        theta: &[f64],
        start: usize,
        end: usize,
        emit_from: usize,
        order: Order,
        sink: &mut dyn FnMut(usize, &ObsOut),
    ) -> Result<()> {
        self.unpack(spec, theta);
        let mut out = std::mem::replace(&mut self.out, ObsOut::new(0));
        let res = match spec.family {
            Family::Varma => self.run_varma(spec, series, start, end, emit_from, order, &mut out, sink),
            Family::Mgarch => self.run_garch(spec, series, start, end, emit_from, order, &mut out, sink),
        };
        self.out = out;
        res
    }

    fn unpack(&mut self, spec: &ModelSpec, theta: &[f64]) {
        let m = self.m;
        let mm = m * m;
        match spec.family {
            Family::Varma => {
                let ni = spec.n_intercept();
                self.a.iter_mut().for_each(|v| *v = 0.0);
                self.a[..ni].copy_from_slice(&theta[..ni]);
                let full = spec.full_coef(theta);
                self.ar.copy_from_slice(&full[..spec.p * mm]);
                self.ma.copy_from_slice(&full[spec.p * mm..]);
                let off = spec.cov_offset();
                let mut k = off;
                self.cov.fill(0.0);
                for r in 0..m {
                    for c in 0..=r {
                        self.cov[(r, c)] = theta[k];
                        k += 1;
                    }
                }
            }
            Family::Mgarch => {
                self.a.copy_from_slice(&theta[..m]);
                self.ar.copy_from_slice(&theta[m..m + spec.p * mm]);
                self.ma
                    .copy_from_slice(&theta[m + spec.p * mm..m + (spec.p + spec.q) * mm]);
                self.cov = correlation_matrix(spec, theta);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn run_varma(
        &mut self,
        spec: &ModelSpec,
        series: &Series,
        start: usize,
        end: usize,
        emit_from: usize,
        order: Order,
        out: &mut ObsOut,
        sink: &mut dyn FnMut(usize, &ObsOut),
    ) -> Result<()> {
        let m = self.m;
        let mm = m * m;
        let nr = self.n_rec;
        let np = self.pairs.len();
        let ring = self.ring;
        let d = self.d;
        self.state.iter_mut().for_each(|v| *v = 0.0);
        if order >= Order::Gradient {
            self.dstate.iter_mut().for_each(|v| *v = 0.0);
        }
        if order >= Order::Hessian {
            self.d2state.iter_mut().for_each(|v| *v = 0.0);
        }

        // Constant covariance block: M = omega omega'.
        let off = spec.cov_offset();
        let omega = self.cov.clone();
        let mmat = &omega * omega.transpose();
        let diag_prod: f64 = (0..m).map(|i| omega[(i, i)]).product();
        if !(diag_prod.abs() > 1e-150) {
            return Err(Error::SingularCovariance { t: start });
        }
        let logdet = 2.0 * (0..m).map(|i| omega[(i, i)].abs().ln()).sum::<f64>();
        let minv = match mmat.clone().cholesky() {
            Some(ch) => ch.inverse(),
            None => return Err(Error::SingularCovariance { t: start }),
        };
        let minv_flat: Vec<f64> = row_major(&minv);
        let n_om = spec.n_cov();
        // dM / d omega_rc = E_rc omega' + omega E_cr
        if order >= Order::Gradient {
            self.m_idx.clear();
            self.dm.clear();
            let mut k = off;
            let mut om_entries = Vec::with_capacity(n_om);
            for r in 0..m {
                for c in 0..=r {
                    om_entries.push((k, r, c));
                    self.m_idx.push(k);
                    let mut dmk = vec![0.0; mm];
                    for j in 0..m {
                        dmk[r * m + j] += omega[(j, c)];
                        dmk[j * m + r] += omega[(j, c)];
                    }
                    self.dm.extend_from_slice(&dmk);
                    k += 1;
                }
            }
            self.d2m_pairs.clear();
            self.d2m.clear();
            if order >= Order::Hessian {
                // d2M / d omega_k d omega_l = E_k E_l' + E_l E_k'
                for (i1, &(k1, r1, c1)) in om_entries.iter().enumerate() {
                    for &(k2, r2, c2) in om_entries.iter().skip(i1) {
                        if c1 == c2 {
                            let mut v = vec![0.0; mm];
                            v[r1 * m + r2] += 1.0;
                            v[r2 * m + r1] += 1.0;
                            self.d2m_pairs.push((k1, k2));
                            self.d2m.extend_from_slice(&v);
                        }
                    }
                }
            }
            self.mu_idx.clear();
            self.mu_idx.extend(0..nr);
            self.d2mu_pairs.clear();
            self.d2mu_pairs.extend(self.pairs.iter().copied());
            self.dmu.resize(nr * m, 0.0);
            self.d2mu.resize(np * m, 0.0);
        }

        let x_at = |s: isize, i: usize| -> f64 {
            if s >= 1 {
                series.obs(s as usize)[i]
            } else {
                0.0
            }
        };

        let mut lags = vec![0usize; ring];
        for s in start..=end {
            let slot = s % ring;
            for (j, l) in lags.iter_mut().enumerate() {
                *l = (s + ring - j) % ring;
            }
            let lag_slot = |j: usize| lags[j];
            let lag_valid = |j: usize| s >= start + j;
            // e_s = x_s - a - sum A_j x_{s-j} - sum B_j e_{s-j}
            let xs = series.obs(s);
            for i in 0..m {
                self.cur[i] = xs[i] - self.a[i];
            }
            for j in 1..=spec.p {
                let sj = s as isize - j as isize;
                if sj < 1 {
                    continue;
                }
                let xl = series.obs(sj as usize);
                let a = &self.ar[(j - 1) * mm..j * mm];
                for c in 0..m {
                    let xc = xl[c];
                    if xc != 0.0 {
                        for r in 0..m {
                            self.cur[r] -= a[c * m + r] * xc;
                        }
                    }
                }
            }
            for j in 1..=spec.q {
                if !lag_valid(j) {
                    continue;
                }
                let ls = lag_slot(j);
                let b = &self.ma[(j - 1) * mm..j * mm];
                for c in 0..m {
                    let ec = self.state[ls * m + c];
                    for r in 0..m {
                        self.cur[r] -= b[c * m + r] * ec;
                    }
                }
            }

            if order >= Order::Gradient {
                for k in 0..nr {
                    let dir = &self.dirs[k];
                    let dk = &mut self.dcur[k * m..(k + 1) * m];
                    dk.iter_mut().for_each(|v| *v = 0.0);
                    if let Some(i) = dir.intercept {
                        dk[i] -= 1.0;
                    }
                    for en in &dir.input {
                        dk[en.row] -= en.val * x_at(s as isize - en.lag as isize, en.col);
                    }
                    for en in &dir.state {
                        if lag_valid(en.lag) {
                            dk[en.row] -= en.val * self.state[lag_slot(en.lag) * m + en.col];
                        }
                    }
                    for j in 1..=spec.q {
                        if !lag_valid(j) {
                            continue;
                        }
                        let ls = lag_slot(j);
                        let b = &self.ma[(j - 1) * mm..j * mm];
                        let prev = &self.dstate[(ls * nr + k) * m..(ls * nr + k + 1) * m];
                        for c in 0..m {
                            let pc = prev[c];
                            for r in 0..m {
                                dk[r] -= b[c * m + r] * pc;
                            }
                        }
                    }
                }
            }
            if order >= Order::Hessian {
                for (pi, &(k, l)) in self.pairs.iter().enumerate() {
                    let v = &mut self.d2cur[pi * m..(pi + 1) * m];
                    v.iter_mut().for_each(|x| *x = 0.0);
                    for (a, b) in [(k, l), (l, k)] {
                        for en in &self.dirs[a].state {
                            if lag_valid(en.lag) {
                                let ls = lag_slot(en.lag);
                                v[en.row] -= en.val * self.dstate[(ls * nr + b) * m + en.col];
                            }
                        }
                    }
                    for j in 1..=spec.q {
                        if !lag_valid(j) {
                            continue;
                        }
                        let ls = lag_slot(j);
                        let b = &self.ma[(j - 1) * mm..j * mm];
                        let prev = &self.d2state[(ls * np + pi) * m..(ls * np + pi + 1) * m];
                        for c in 0..m {
                            let pc = prev[c];
                            for r in 0..m {
                                v[r] -= b[c * m + r] * pc;
                            }
                        }
                    }
                }
            }

            // commit current step into the ring
            self.state[slot * m..(slot + 1) * m].copy_from_slice(&self.cur);
            if order >= Order::Gradient {
                self.dstate[slot * nr * m..(slot + 1) * nr * m].copy_from_slice(&self.dcur);
            }
            if order >= Order::Hessian {
                self.d2state[slot * np * m..(slot + 1) * np * m].copy_from_slice(&self.d2cur);
            }

            if s >= emit_from {
                self.e.copy_from_slice(&self.cur);
                if order >= Order::Gradient {
                    for (dst, src) in self.dmu.iter_mut().zip(&self.dcur) {
                        *dst = -src;
                    }
                }
                if order >= Order::Hessian {
                    for (dst, src) in self.d2mu.iter_mut().zip(&self.d2cur) {
                        *dst = -src;
                    }
                }
                let terms = GaussTerms {
                    m,
                    d,
                    e: &self.e,
                    minv: &minv_flat,
                    logdet,
                    mu_idx: &self.mu_idx,
                    dmu: &self.dmu,
                    m_idx: &self.m_idx,
                    dm: &self.dm,
                    d2mu_pairs: &self.d2mu_pairs,
                    d2mu: &self.d2mu,
                    d2m_pairs: &self.d2m_pairs,
                    d2m: &self.d2m,
                };
                assemble(&terms, order, &mut self.scratch, out);
                sink(s, out);
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn run_garch(
        &mut self,
        spec: &ModelSpec,
        series: &Series,
        start: usize,
        end: usize,
        emit_from: usize,
        order: Order,
        out: &mut ObsOut,
        sink: &mut dyn FnMut(usize, &ObsOut),
    ) -> Result<()> {
        let m = self.m;
        let mm = m * m;
        let nr = self.n_rec;
        let np = self.pairs.len();
        let ring = self.ring;
        let d = self.d;
        let off = spec.cov_offset();

        let corr = self.cov.clone();
        let corr_chol = match corr.clone().cholesky() {
            Some(c) => c,
            None => return Err(Error::SingularCovariance { t: start }),
        };
        let corr_logdet = 2.0 * corr_chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let corr_inv = corr_chol.inverse();

        // zero pre-sample volatility, so the first recursion step gives h = c0
        self.state.iter_mut().for_each(|v| *v = 0.0);
        if order >= Order::Gradient {
            self.dstate.iter_mut().for_each(|v| *v = 0.0);
        }
        if order >= Order::Hessian {
            self.d2state.iter_mut().for_each(|v| *v = 0.0);
        }
        let n_rho = spec.n_cov();
        if order >= Order::Gradient {
            self.mu_idx.clear();
            self.dmu.clear();
            self.d2mu_pairs.clear();
            self.d2mu.clear();
            self.m_idx.clear();
            self.m_idx.extend(0..d);
            self.dm.resize(d * mm, 0.0);
            if order >= Order::Hessian {
                self.d2m_pairs.clear();
                for k in 0..nr {
                    for l in k..nr {
                        self.d2m_pairs.push((k, l));
                    }
                }
                for k in 0..nr {
                    for l in 0..n_rho {
                        self.d2m_pairs.push((k, off + l));
                    }
                }
                self.d2m.resize(self.d2m_pairs.len() * mm, 0.0);
            }
        }
        let mut rho_pos = Vec::with_capacity(n_rho);
        for r in 1..m {
            for c in 0..r {
                rho_pos.push((r, c));
            }
        }

        let y_at = |s: isize, i: usize| -> f64 {
            if s >= 1 {
                let v = series.obs(s as usize)[i];
                v * v
            } else {
                0.0
            }
        };

        let mut sq = vec![0.0; m];
        let mut lam = vec![0.0; nr * m];
        let mut g = vec![0.0; mm];
        let mut dg = vec![0.0; nr * mm];

        let mut lags = vec![0usize; ring];
        for s in start..=end {
            let slot = s % ring;
            for (j, l) in lags.iter_mut().enumerate() {
                *l = (s + ring - j) % ring;
            }
            let lag_slot = |j: usize| lags[j];
            // h_s = c0 + sum C_j y_{s-j} + sum D_j h_{s-j}
            self.cur.copy_from_slice(&self.a);
            for j in 1..=spec.p {
                let sj = s as isize - j as isize;
                if sj < 1 {
                    continue;
                }
                let c = &self.ar[(j - 1) * mm..j * mm];
                for cc in 0..m {
                    let y = y_at(sj, cc);
                    for r in 0..m {
                        self.cur[r] += c[cc * m + r] * y;
                    }
                }
            }
            for j in 1..=spec.q {
                let ls = lag_slot(j);
                let dmat = &self.ma[(j - 1) * mm..j * mm];
                for cc in 0..m {
                    let hv = self.state[ls * m + cc];
                    for r in 0..m {
                        self.cur[r] += dmat[cc * m + r] * hv;
                    }
                }
            }
            if self.cur.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::NonPositiveVolatility { t: s });
            }
            if order >= Order::Gradient {
                for k in 0..nr {
                    let dir = &self.dirs[k];
                    let dk = &mut self.dcur[k * m..(k + 1) * m];
                    dk.iter_mut().for_each(|v| *v = 0.0);
                    if let Some(i) = dir.intercept {
                        dk[i] += 1.0;
                    }
                    for en in &dir.input {
                        dk[en.row] += en.val * y_at(s as isize - en.lag as isize, en.col);
                    }
                    for en in &dir.state {
                        dk[en.row] += en.val * self.state[lag_slot(en.lag) * m + en.col];
                    }
                    for j in 1..=spec.q {
                        let ls = lag_slot(j);
                        let dmat = &self.ma[(j - 1) * mm..j * mm];
                        let prev = &self.dstate[(ls * nr + k) * m..(ls * nr + k + 1) * m];
                        for cc in 0..m {
                            let pc = prev[cc];
                            for r in 0..m {
                                dk[r] += dmat[cc * m + r] * pc;
                            }
                        }
                    }
                }
            }
            if order >= Order::Hessian {
                for (pi, &(k, l)) in self.pairs.iter().enumerate() {
                    let v = &mut self.d2cur[pi * m..(pi + 1) * m];
                    v.iter_mut().for_each(|x| *x = 0.0);
                    for en in &self.dirs[k].state {
                        let ls = lag_slot(en.lag);
                        v[en.row] += en.val * self.dstate[(ls * nr + l) * m + en.col];
                    }
                    for en in &self.dirs[l].state {
                        let ls = lag_slot(en.lag);
                        v[en.row] += en.val * self.dstate[(ls * nr + k) * m + en.col];
                    }
                    for j in 1..=spec.q {
                        let ls = lag_slot(j);
                        let dmat = &self.ma[(j - 1) * mm..j * mm];
                        let prev = &self.d2state[(ls * np + pi) * m..(ls * np + pi + 1) * m];
                        for cc in 0..m {
                            let pc = prev[cc];
                            for r in 0..m {
                                v[r] += dmat[cc * m + r] * pc;
                            }
                        }
                    }
                }
            }
            self.state[slot * m..(slot + 1) * m].copy_from_slice(&self.cur);
            if order >= Order::Gradient {
                self.dstate[slot * nr * m..(slot + 1) * nr * m].copy_from_slice(&self.dcur);
            }
            if order >= Order::Hessian {
                self.d2state[slot * np * m..(slot + 1) * np * m].copy_from_slice(&self.d2cur);
            }

            if s < emit_from {
                continue;
            }
            // M = S Omega S with S = diag(sqrt(h))
            let h = &self.cur;
            for i in 0..m {
                sq[i] = h[i].sqrt();
            }
            let mut minv = vec![0.0; mm];
            for a in 0..m {
                for b in 0..m {
                    g[a * m + b] = sq[a] * sq[b];
                    minv[a * m + b] = corr_inv[(a, b)] / (sq[a] * sq[b]);
                }
            }
            let logdet = corr_logdet + h.iter().map(|v| v.ln()).sum::<f64>();
            self.e.copy_from_slice(series.obs(s));
            if order >= Order::Gradient {
                for k in 0..nr {
                    for a in 0..m {
                        lam[k * m + a] = self.dcur[k * m + a] / h[a];
                    }
                    for a in 0..m {
                        for b in 0..m {
                            let dgab = 0.5 * g[a * m + b] * (lam[k * m + a] + lam[k * m + b]);
                            dg[k * mm + a * m + b] = dgab;
                            self.dm[k * mm + a * m + b] = corr[(a, b)] * dgab;
                        }
                    }
                }
                for (ri, &(r, c)) in rho_pos.iter().enumerate() {
                    let k = off + ri;
                    let dmk = &mut self.dm[k * mm..(k + 1) * mm];
                    dmk.iter_mut().for_each(|v| *v = 0.0);
                    dmk[r * m + c] = g[r * m + c];
                    dmk[c * m + r] = g[c * m + r];
                }
            }
            if order >= Order::Hessian {
                let mut pidx = 0usize;
                let mut pair_lookup = 0usize;
                for k in 0..nr {
                    for l in k..nr {
                        // locate d2h for (k, l) when it is structurally nonzero
                        let d2h: Option<&[f64]> = if pair_lookup < np && self.pairs[pair_lookup] == (k, l) {
                            let sl = &self.d2cur[pair_lookup * m..(pair_lookup + 1) * m];
                            pair_lookup += 1;
                            Some(sl)
                        } else {
                            None
                        };
                        let dst = &mut self.d2m[pidx * mm..(pidx + 1) * mm];
                        for a in 0..m {
                            for b in 0..m {
                                let (la_k, lb_k) = (lam[k * m + a], lam[k * m + b]);
                                let (la_l, lb_l) = (lam[l * m + a], lam[l * m + b]);
                                let mut second = -la_k * la_l - lb_k * lb_l;
                                if let Some(d2) = d2h {
                                    second += d2[a] / h[a] + d2[b] / h[b];
                                }
                                let d2g = g[a * m + b]
                                    * (0.25 * (la_k + lb_k) * (la_l + lb_l) + 0.5 * second);
                                dst[a * m + b] = corr[(a, b)] * d2g;
                            }
                        }
                        pidx += 1;
                    }
                }
                for k in 0..nr {
                    for &(r, c) in rho_pos.iter() {
                        let dst = &mut self.d2m[pidx * mm..(pidx + 1) * mm];
                        dst.iter_mut().for_each(|v| *v = 0.0);
                        dst[r * m + c] = dg[k * mm + r * m + c];
                        dst[c * m + r] = dg[k * mm + c * m + r];
                        pidx += 1;
                    }
                }
            }
            let terms = GaussTerms {
                m,
                d,
                e: &self.e,
                minv: &minv,
                logdet,
                mu_idx: &self.mu_idx,
                dmu: &self.dmu,
                m_idx: &self.m_idx,
                dm: &self.dm,
                d2mu_pairs: &self.d2mu_pairs,
                d2mu: &self.d2mu,
                d2m_pairs: &self.d2m_pairs,
                d2m: &self.d2m,
            };
            assemble(&terms, order, &mut self.scratch, out);
            sink(s, out);
        }
        Ok(())
    }
}

fn row_major(mat: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = mat.shape();
    let mut v = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            v.push(mat[(i, j)]);
        }
    }
    v
}

/// VARMA residual path at fixed `theta` (columns `t = 1..T`).
pub(crate) fn varma_states(spec: &ModelSpec, series: &Series, theta: &[f64]) -> DMatrix<f64> {
    let c = spec.varma_coefficients(theta);
    let m = spec.m;
    let n = series.len();
    let mut eta = DMatrix::zeros(m, n);
    for t in 1..=n {
        let mut e = nalgebra::DVector::from_column_slice(series.obs(t)) - &c.a;
        for (j, a) in c.ar.iter().enumerate() {
            if t > j + 1 {
                e -= a * nalgebra::DVector::from_column_slice(series.obs(t - j - 1));
            }
        }
        for (j, b) in c.ma.iter().enumerate() {
            if t > j + 1 {
                e -= b * eta.column(t - j - 2);
            }
        }
        eta.set_column(t - 1, &e);
    }
    eta
}

/// GARCH conditional variance path at fixed `theta` (columns `t = 1..T`).
pub(crate) fn garch_states(spec: &ModelSpec, series: &Series, theta: &[f64]) -> DMatrix<f64> {
    let c = spec.garch_coefficients(theta);
    let m = spec.m;
    let n = series.len();
    let mut h = DMatrix::zeros(m, n);
    for t in 1..=n {
        let mut ht = c.c0.clone();
        for (j, cm) in c.arch.iter().enumerate() {
            if t > j + 1 {
                let x = nalgebra::DVector::from_column_slice(series.obs(t - j - 1));
                ht += cm * x.component_mul(&x);
            }
        }
        for (j, dm) in c.garch.iter().enumerate() {
            if t > j + 1 {
                ht += dm * h.column(t - j - 2);
            }
        }
        h.set_column(t - 1, &ht);
    }
    h
}
