//! Gaussian quasi-log-likelihood of one observation with analytic
//! derivatives, given the derivatives of the conditional mean and covariance.

use super::{ObsOut, Order};

/// Inputs for one observation. Matrices are `m x m` row-major, vectors of
/// directions are stacked (`dmu[k * m..(k + 1) * m]` belongs to `mu_idx[k]`).
pub(crate) struct GaussTerms<'a> {
    pub m: usize,
    pub d: usize,
    /// Residual `x_t - mu_t`.
    pub e: &'a [f64],
    pub minv: &'a [f64],
    pub logdet: f64,
    pub mu_idx: &'a [usize],
    pub dmu: &'a [f64],
    pub m_idx: &'a [usize],
    pub dm: &'a [f64],
    pub d2mu_pairs: &'a [(usize, usize)],
    pub d2mu: &'a [f64],
    pub d2m_pairs: &'a [(usize, usize)],
    pub d2m: &'a [f64],
}

#[derive(Debug, Clone)]
pub(crate) struct Scratch {
    u: Vec<f64>,
    c: Vec<f64>,
    b: Vec<f64>,
    f: Vec<f64>,
    a: Vec<f64>,
    tmp: Vec<f64>,
}

impl Scratch {
    pub fn new(m: usize, d: usize) -> Self {
        Self {
            u: vec![0.0; m],
            c: vec![0.0; d * m],
            b: vec![0.0; d * m],
            f: vec![0.0; d * m],
            a: vec![0.0; d * m * m],
            tmp: vec![0.0; m],
        }
    }
}

#[inline]
fn matvec(mat: &[f64], v: &[f64], out: &mut [f64], m: usize) {
    for r in 0..m {
        let row = &mat[r * m..(r + 1) * m];
        out[r] = row.iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn assemble(t: &GaussTerms<'_>, order: Order, s: &mut Scratch, out: &mut ObsOut) {
    let m = t.m;
    let mm = m * m;
    let d = t.d;
    matvec(t.minv, t.e, &mut s.u, m);
    out.loglik = -0.5 * dot(t.e, &s.u) - 0.5 * t.logdet;
    if order < Order::Gradient {
        return;
    }
    let nmu = t.mu_idx.len();
    let nm = t.m_idx.len();
    if s.c.len() < nmu.max(nm) * m {
        let n = nmu.max(nm);
        s.c.resize(n * m, 0.0);
        s.b.resize(n * m, 0.0);
        s.f.resize(n * m, 0.0);
        s.a.resize(n * mm, 0.0);
    }
    out.grad.iter_mut().for_each(|v| *v = 0.0);
    for (k, &i) in t.mu_idx.iter().enumerate() {
        out.grad[i] += dot(&s.u, &t.dmu[k * m..(k + 1) * m]);
    }
    for (k, &i) in t.m_idx.iter().enumerate() {
        let dmk = &t.dm[k * mm..(k + 1) * mm];
        matvec(dmk, &s.u, &mut s.b[k * m..(k + 1) * m], m);
        let quad = dot(&s.u, &s.b[k * m..(k + 1) * m]);
        // A_k = M^{-1} dM_k
        let ak = &mut s.a[k * mm..(k + 1) * mm];
        for r in 0..m {
            for c in 0..m {
                let mut acc = 0.0;
                for l in 0..m {
                    acc += t.minv[r * m + l] * dmk[l * m + c];
                }
                ak[r * m + c] = acc;
            }
        }
        let tr: f64 = (0..m).map(|r| ak[r * m + r]).sum();
        out.grad[i] += 0.5 * quad - 0.5 * tr;
    }
    if order < Order::Hessian {
        return;
    }
    for k in 0..nmu {
        matvec(t.minv, &t.dmu[k * m..(k + 1) * m], &mut s.tmp, m);
        s.c[k * m..(k + 1) * m].copy_from_slice(&s.tmp);
    }
    for k in 0..nm {
        matvec(t.minv, &s.b[k * m..(k + 1) * m], &mut s.tmp, m);
        s.f[k * m..(k + 1) * m].copy_from_slice(&s.tmp);
    }
    let h = &mut out.hess;
    h.iter_mut().for_each(|v| *v = 0.0);
    let mut add = |i: usize, j: usize, v: f64| {
        h[i * d + j] += v;
        if i != j {
            h[j * d + i] += v;
        }
    };
    // mean x mean: -dmu_i' M^{-1} dmu_j
    for k in 0..nmu {
        for l in k..nmu {
            let v = -dot(&t.dmu[k * m..(k + 1) * m], &s.c[l * m..(l + 1) * m]);
            add(t.mu_idx[k], t.mu_idx[l], v);
        }
    }
    // covariance x covariance: -b_i' f_j + 1/2 tr(A_j A_i)
    for k in 0..nm {
        for l in k..nm {
            let ak = &s.a[k * mm..(k + 1) * mm];
            let al = &s.a[l * mm..(l + 1) * mm];
            let mut tr = 0.0;
            for r in 0..m {
                for c in 0..m {
                    tr += ak[r * m + c] * al[c * m + r];
                }
            }
            let v = -dot(&s.b[k * m..(k + 1) * m], &s.f[l * m..(l + 1) * m]) + 0.5 * tr;
            add(t.m_idx[k], t.m_idx[l], v);
        }
    }
    // mean x covariance: -b_j' c_i
    for k in 0..nmu {
        for l in 0..nm {
            let (i, j) = (t.mu_idx[k], t.m_idx[l]);
            let v = -dot(&s.b[l * m..(l + 1) * m], &s.c[k * m..(k + 1) * m]);
            if i == j {
                add(i, j, 2.0 * v);
            } else {
                add(i, j, v);
            }
        }
    }
    for (k, &(i, j)) in t.d2mu_pairs.iter().enumerate() {
        add(i, j, dot(&s.u, &t.d2mu[k * m..(k + 1) * m]));
    }
    for (k, &(i, j)) in t.d2m_pairs.iter().enumerate() {
        let d2 = &t.d2m[k * mm..(k + 1) * mm];
        matvec(d2, &s.u, &mut s.tmp, m);
        let quad = dot(&s.u, &s.tmp);
        let mut tr = 0.0;
        for r in 0..m {
            for c in 0..m {
                tr += t.minv[r * m + c] * d2[c * m + r];
            }
        }
        add(i, j, 0.5 * quad - 0.5 * tr);
    }
}
