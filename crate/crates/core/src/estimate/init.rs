//! Least-squares starting values: a long local-linear VAR supplies residuals
//! that stand in for the latent innovations, after which the model is
//! linear in its coefficients.

use nalgebra::{DMatrix, DVector};

use super::LocalParams;
use crate::error::{Error, Result};
use crate::kernels::{Bandwidth, KernelSpec};
use crate::models::{Family, ModelSpec, Series, C0_FLOOR, OMEGA_DIAG_FLOOR};

const COND_LIMIT: f64 = 1e12;

/// Weighted normal equations `sum w X_t' X_t b = sum w X_t' y_t` for a
/// multi-response regression sharing one regressor row per observation.
struct Normal {
    xtx: DMatrix<f64>,
    xty: DMatrix<f64>,
}

impl Normal {
    fn new(k: usize, r: usize) -> Self {
        Self {
            xtx: DMatrix::zeros(k, k),
            xty: DMatrix::zeros(k, r),
        }
    }

    fn add(&mut self, z: &[f64], y: &[f64], w: f64) {
        let k = z.len();
        for i in 0..k {
            let wz = w * z[i];
            if wz == 0.0 {
                continue;
            }
            for j in 0..k {
                self.xtx[(i, j)] += wz * z[j];
            }
            for (c, yc) in y.iter().enumerate() {
                self.xty[(i, c)] += wz * yc;
            }
        }
    }

    fn solve(&self) -> Result<DMatrix<f64>> {
        solve_normal(&self.xtx, &self.xty)
    }
}

/// Solves a symmetric PSD normal system. Regressors that are identically
/// zero get a zero coefficient; the rest must be well conditioned after
/// diagonal scaling.
fn solve_normal(xtx: &DMatrix<f64>, xty: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = xtx.nrows();
    let keep: Vec<usize> = (0..k).filter(|&i| xtx[(i, i)] > 0.0).collect();
    let mut out = DMatrix::zeros(k, xty.ncols());
    if keep.is_empty() {
        return Ok(out);
    }
    let n = keep.len();
    let s: Vec<f64> = keep.iter().map(|&i| xtx[(i, i)].sqrt()).collect();
    let a = DMatrix::from_fn(n, n, |i, j| xtx[(keep[i], keep[j])] / (s[i] * s[j]));
    let eig = a.clone().symmetric_eigen();
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    if !(lmin > 0.0) || lmax / lmin > COND_LIMIT {
        return Err(Error::RankDeficientDesign {
            cond: if lmin > 0.0 { lmax / lmin } else { f64::INFINITY },
        });
    }
    let b = DMatrix::from_fn(n, xty.ncols(), |i, c| xty[(keep[i], c)] / s[i]);
    let sol = a.cholesky().ok_or(Error::RankDeficientDesign { cond: f64::INFINITY })?.solve(&b);
    for (i, &ki) in keep.iter().enumerate() {
        for c in 0..xty.ncols() {
            out[(ki, c)] = sol[(i, c)] / s[i];
        }
    }
    Ok(out)
}

/// Observations with positive kernel weight: `(t, K_h(tau_t - tau), u_t)`.
fn window(kernel: &KernelSpec, n: usize, tau: f64, h: f64, first: usize) -> Vec<(usize, f64, f64)> {
    (first.max(1)..=n)
        .filter_map(|t| {
            let x = t as f64 / n as f64 - tau;
            let w = kernel.scaled(x, h);
            (w > 0.0).then_some((t, w, x / h))
        })
        .collect()
}

/// Long-VAR order `round(2 (T h)^{1/3})`, reduced until the local linear
/// regression keeps at least 20 observations per regressor pair.
fn long_order(n: usize, h: f64, m: usize, n_window: usize) -> usize {
    let mut p = (2.0 * (n as f64 * h).cbrt()).round() as usize;
    while p > 1 && (n_window < p + 20 || 2 * (1 + m * p) > n_window / 3) {
        p -= 1;
    }
    p.max(1)
}

fn lagged(series: &Series, t: usize, j: usize, out: &mut [f64]) {
    if t > j {
        out.copy_from_slice(series.obs(t - j));
    } else {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Local linear long VAR of `y` (columns are observations) on its own lags
/// and an intercept. Returns `(level, slope)` coefficient matrices, each
/// `(1 + m p) x m`.
fn long_var(
    y: &DMatrix<f64>,
    p: usize,
    win: &[(usize, f64, f64)],
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let m = y.nrows();
    let k = 1 + m * p;
    let mut ne = Normal::new(2 * k, m);
    let mut z = vec![0.0; 2 * k];
    for &(t, w, u) in win {
        fill_lags(y, t, p, &mut z[..k]);
        for i in 0..k {
            z[k + i] = u * z[i];
        }
        ne.add(&z, y.column(t - 1).as_slice(), w);
    }
    let b = ne.solve()?;
    Ok((b.rows(0, k).into_owned(), b.rows(k, k).into_owned()))
}

fn fill_lags(y: &DMatrix<f64>, t: usize, p: usize, z: &mut [f64]) {
    let m = y.nrows();
    z[0] = 1.0;
    for j in 1..=p {
        for i in 0..m {
            z[1 + (j - 1) * m + i] = if t > j { y[(i, t - j - 1)] } else { 0.0 };
        }
    }
}

/// Fitted values of the long VAR at `t` from the local expansion around
/// the target.
fn long_fit(
    y: &DMatrix<f64>,
    p: usize,
    coef: &(DMatrix<f64>, DMatrix<f64>),
    t: usize,
    u: f64,
) -> DVector<f64> {
    let k = 1 + y.nrows() * p;
    let mut z = vec![0.0; k];
    fill_lags(y, t, p, &mut z);
    let z = DVector::from_vec(z);
    (&coef.0 + &coef.1 * u).transpose() * z
}

/// Local linear fit of symmetric outer products `sum w [1, u] (x x')`.
fn local_outer(
    vals: &[(DVector<f64>, f64, f64)],
) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = vals.first().map_or(0, |v| v.0.len());
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    let mut b0 = DMatrix::zeros(m, m);
    let mut b1 = DMatrix::zeros(m, m);
    for (e, w, u) in vals {
        let o = e * e.transpose();
        s0 += w;
        s1 += w * u;
        s2 += w * u * u;
        b0 += &o * *w;
        b1 += &o * (w * u);
    }
    let det = s0 * s2 - s1 * s1;
    if !(det > 1e-14 * s0 * s2.max(1e-300)) {
        let lvl = if s0 > 0.0 { b0 / s0 } else { DMatrix::zeros(m, m) };
        return (lvl, DMatrix::zeros(m, m));
    }
    let lvl = (&b0 * s2 - &b1 * s1) / det;
    let slope = (&b1 * s0 - &b0 * s1) / det;
    (lvl, slope)
}

/// Starting values for the local likelihood at `tau`.
pub fn preliminary_init(
    spec: &ModelSpec,
    series: &Series,
    tau: f64,
    h: Bandwidth,
) -> Result<LocalParams> {
    if series.dim() != spec.m {
        return Err(Error::InvalidSeries(format!(
            "series has dimension {}, model expects {}",
            series.dim(),
            spec.m
        )));
    }
    match spec.family {
        Family::Varma => init_varma(spec, series, tau, h),
        Family::Mgarch => init_garch(spec, series, tau, h),
    }
}

fn long_stage(
    y: &DMatrix<f64>,
    n: usize,
    tau: f64,
    h: f64,
) -> Result<(usize, (DMatrix<f64>, DMatrix<f64>), Vec<(usize, f64, f64)>)> {
    let kernel = KernelSpec::EPANECHNIKOV;
    let all = window(&kernel, n, tau, h, 1);
    let p = long_order(n, h, y.nrows(), all.len());
    let win = window(&kernel, n, tau, h, p + 1);
    if win.len() < 20 {
        return Err(Error::Precondition(format!(
            "only {} observations left after {p} long-VAR lags",
            win.len()
        )));
    }
    let coef = long_var(y, p, &win)?;
    Ok((p, coef, win))
}

fn init_varma(spec: &ModelSpec, series: &Series, tau: f64, h: Bandwidth) -> Result<LocalParams> {
    let m = spec.m;
    let mm = m * m;
    let n = series.len();
    let hv = h.value();
    let x = series.values();
    let (pl, coef, win) = long_stage(&x, n, tau, hv)?;
    let resid = |t: usize| -> DVector<f64> {
        if t == 0 {
            return DVector::zeros(m);
        }
        let u = (t as f64 / n as f64 - tau) / hv;
        x.column(t - 1) - long_fit(&x, pl, &coef, t, u)
    };

    // coefficient directions: rows of vec(A_1..A_p, B_1..B_q) per free parameter
    let nc = spec.n_coef();
    let ni = spec.n_intercept();
    let dirs: Vec<Vec<(usize, f64)>> = (0..nc)
        .map(|k| match &spec.restriction {
            Some(r) => r
                .matrix()
                .column(k)
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (i, *v))
                .collect(),
            None => vec![(k, 1.0)],
        })
        .collect();
    let kk = ni + nc;
    let mut xtx = DMatrix::zeros(2 * kk, 2 * kk);
    let mut xty = DMatrix::zeros(2 * kk, 1);
    let mut zstar = vec![0.0; m * (spec.p + spec.q)];
    let mut xt = DMatrix::zeros(m, 2 * kk);
    let mut lag = vec![0.0; m];
    let mut resid_cache: Vec<Option<DVector<f64>>> = vec![None; n + 1];
    let mut eta_at = |t: usize| -> DVector<f64> {
        resid_cache[t].get_or_insert_with(|| resid(t)).clone()
    };
    for &(t, w, u) in &win {
        for j in 1..=spec.p {
            lagged(series, t, j, &mut lag);
            zstar[(j - 1) * m..j * m].copy_from_slice(&lag);
        }
        for j in 1..=spec.q {
            let e = if t > j { eta_at(t - j) } else { DVector::zeros(m) };
            let off = (spec.p + j - 1) * m;
            zstar[off..off + m].copy_from_slice(e.as_slice());
        }
        xt.fill(0.0);
        for i in 0..ni {
            xt[(i, i)] = 1.0;
        }
        for (k, dir) in dirs.iter().enumerate() {
            for &(idx, val) in dir {
                let block = idx / mm;
                let within = idx % mm;
                let (r, c) = (within % m, within / m);
                xt[(r, ni + k)] += val * zstar[block * m + c];
            }
        }
        for c in 0..kk {
            for r in 0..m {
                xt[(r, kk + c)] = u * xt[(r, c)];
            }
        }
        let y = x.column(t - 1);
        xtx += xt.transpose() * &xt * w;
        xty += xt.transpose() * y * w;
    }
    let sol = solve_normal(&xtx, &xty)?;

    // innovation covariance from long-VAR residuals
    let outer: Vec<(DVector<f64>, f64, f64)> = win.iter().map(|&(t, w, u)| (eta_at(t), w, u)).collect();
    let (s0, s1) = local_outer(&outer);
    let floor = OMEGA_DIAG_FLOOR * OMEGA_DIAG_FLOOR;
    let s0 = clamp_psd(&s0, floor);
    let l = s0.clone().cholesky().map(|c| c.l()).unwrap_or_else(|| {
        DMatrix::from_diagonal(&s0.diagonal().map(|v| v.max(floor).sqrt()))
    });
    let dl = cholesky_derivative(&l, &s1);

    let d = spec.dim();
    let mut eta1 = DVector::zeros(d);
    let mut eta2 = DVector::zeros(d);
    for i in 0..kk {
        eta1[i] = sol[(i, 0)];
        eta2[i] = sol[(kk + i, 0)];
    }
    let mut k = spec.cov_offset();
    for r in 0..m {
        for c in 0..=r {
            eta1[k] = l[(r, c)];
            eta2[k] = dl[(r, c)];
            k += 1;
        }
    }
    let mut p = LocalParams { eta1, eta2 };
    p.project(spec);
    Ok(p)
}

/// Eigenvalue floor for a symmetric matrix.
fn clamp_psd(a: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Directional derivative of the Cholesky factor: `dL = L Phi(L^{-1} dS L^{-T})`
/// with `Phi` keeping the strict lower triangle and half the diagonal.
fn cholesky_derivative(l: &DMatrix<f64>, ds: &DMatrix<f64>) -> DMatrix<f64> {
    let m = l.nrows();
    let Some(linv) = l.clone().try_inverse() else {
        return DMatrix::zeros(m, m);
    };
    let inner = &linv * ds * linv.transpose();
    let phi = DMatrix::from_fn(m, m, |r, c| match r.cmp(&c) {
        std::cmp::Ordering::Greater => inner[(r, c)],
        std::cmp::Ordering::Equal => 0.5 * inner[(r, c)],
        std::cmp::Ordering::Less => 0.0,
    });
    l * phi
}

fn init_garch(spec: &ModelSpec, series: &Series, tau: f64, h: Bandwidth) -> Result<LocalParams> {
    let m = spec.m;
    let mm = m * m;
    let n = series.len();
    let hv = h.value();
    let x = series.values();
    let y = x.map(|v| v * v);
    let (pl, coef, win) = long_stage(&y, n, tau, hv)?;
    let u_of = |t: usize| (t as f64 / n as f64 - tau) / hv;
    let fitted: Vec<DVector<f64>> = (1..=n)
        .map(|t| long_fit(&y, pl, &coef, t, u_of(t)).map(|v| v.max(1e-8)))
        .collect();
    let v_hat = |t: usize| -> DVector<f64> {
        if t == 0 {
            DVector::zeros(m)
        } else {
            y.column(t - 1) - &fitted[t - 1]
        }
    };

    // correlations of the standardized returns
    let std: Vec<(DVector<f64>, f64, f64)> = win
        .iter()
        .map(|&(t, w, u)| {
            let e = x.column(t - 1).component_div(&fitted[t - 1].map(f64::sqrt));
            (e, w, u)
        })
        .collect();
    let (s0, s1) = local_outer(&std);

    // ARMA representation of the squares
    let r = spec.p.max(spec.q);
    let k = 1 + m * r + m * spec.q;
    let mut ne = Normal::new(2 * k, m);
    let mut z = vec![0.0; 2 * k];
    let mut ybar = (DVector::zeros(m), 0.0);
    for &(t, w, u) in &win {
        z[0] = 1.0;
        for j in 1..=r {
            for i in 0..m {
                z[1 + (j - 1) * m + i] = if t > j { y[(i, t - j - 1)] } else { 0.0 };
            }
        }
        for j in 1..=spec.q {
            let vj = if t > j { v_hat(t - j) } else { DVector::zeros(m) };
            for i in 0..m {
                z[1 + m * r + (j - 1) * m + i] = vj[i];
            }
        }
        for i in 0..k {
            z[k + i] = u * z[i];
        }
        ne.add(&z, y.column(t - 1).as_slice(), w);
        ybar.0 += y.column(t - 1) * w;
        ybar.1 += w;
    }
    let b = ne.solve()?;
    let coef_mat = |row0: usize, j: usize, slope: bool| -> DMatrix<f64> {
        // rows of b are regressors; columns are equations: M[eq, reg]
        let base = if slope { k } else { 0 } + row0 + j * m;
        DMatrix::from_fn(m, m, |eq, reg| b[(base + reg, eq)])
    };
    let mut dmat = Vec::new();
    let mut dslope = Vec::new();
    for j in 0..spec.q {
        dmat.push(-coef_mat(1 + m * r, j, false));
        dslope.push(-coef_mat(1 + m * r, j, true));
    }
    let mut cmat = Vec::new();
    let mut cslope = Vec::new();
    for j in 0..spec.p {
        let mut c = coef_mat(1, j, false);
        let mut cs = coef_mat(1, j, true);
        if j < spec.q {
            c -= &dmat[j];
            cs -= &dslope[j];
        }
        cmat.push(c);
        cslope.push(cs);
    }
    // project into the admissible region, freezing clamped entries
    let clamp_mats = |mats: &mut [DMatrix<f64>], slopes: &mut [DMatrix<f64>], hi: f64| {
        for (a, s) in mats.iter_mut().zip(slopes.iter_mut()) {
            for (v, sv) in a.iter_mut().zip(s.iter_mut()) {
                if !(*v > 0.0) || !v.is_finite() {
                    *v = 0.0;
                    *sv = 0.0;
                } else if *v > hi {
                    *v = hi;
                    *sv = 0.0;
                }
            }
        }
    };
    clamp_mats(&mut cmat, &mut cslope, 0.9);
    clamp_mats(&mut dmat, &mut dslope, 0.95);
    let mut total = DMatrix::zeros(m, m);
    for a in cmat.iter().chain(dmat.iter()) {
        total += a;
    }
    let radius = total.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    if radius > 0.95 {
        let f = 0.9 / radius;
        for a in cmat.iter_mut().chain(dmat.iter_mut()) {
            *a *= f;
        }
        total *= f;
    }
    let ymean = if ybar.1 > 0.0 { ybar.0 / ybar.1 } else { DVector::from_element(m, 1.0) };
    let c0 = (DMatrix::identity(m, m) - &total) * &ymean;
    let c0 = DVector::from_fn(m, |i, _| c0[i].max(0.05 * ymean[i]).max(10.0 * C0_FLOOR));

    let d = spec.dim();
    let mut eta1 = DVector::zeros(d);
    let mut eta2 = DVector::zeros(d);
    eta1.rows_mut(0, m).copy_from(&c0);
    for (j, (a, s)) in cmat.iter().zip(&cslope).enumerate() {
        let off = m + j * mm;
        eta1.rows_mut(off, mm).copy_from_slice(a.as_slice());
        eta2.rows_mut(off, mm).copy_from_slice(s.as_slice());
    }
    for (j, (a, s)) in dmat.iter().zip(&dslope).enumerate() {
        let off = m + (spec.p + j) * mm;
        eta1.rows_mut(off, mm).copy_from_slice(a.as_slice());
        eta2.rows_mut(off, mm).copy_from_slice(s.as_slice());
    }
    let mut kk = spec.cov_offset();
    let diag_ok = (0..m).all(|i| s0[(i, i)] > 0.0);
    for rr in 1..m {
        for c in 0..rr {
            if diag_ok {
                let sd = (s0[(rr, rr)] * s0[(c, c)]).sqrt();
                let rho = s0[(rr, c)] / sd;
                let drho = s1[(rr, c)] / sd
                    - 0.5 * rho * (s1[(rr, rr)] / s0[(rr, rr)] + s1[(c, c)] / s0[(c, c)]);
                eta1[kk] = rho.clamp(-0.9, 0.9);
                eta2[kk] = if rho.abs() < 0.9 && drho.is_finite() { drho } else { 0.0 };
            }
            kk += 1;
        }
    }
    let mut p = LocalParams { eta1, eta2 };
    p.project(spec);
    if crate::models::ParamPoint::new(spec, p.eta1.as_slice().to_vec()).is_err() {
        // correlation block not positive definite: start from independence
        for i in spec.cov_offset()..d {
            p.eta1[i] = 0.0;
            p.eta2[i] = 0.0;
        }
    }
    Ok(p)
}
