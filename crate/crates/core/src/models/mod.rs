//! Time-varying causal process families.
//!
//! A model is described by a [`ModelSpec`] which fixes the family (VARMA or
//! multivariate GARCH), the orders, and the layout of the parameter vector.
//! The per-observation Gaussian quasi-log-likelihood
//!
//! ```text
//! l(x_t, z_{t-1}; v) = -1/2 (x_t - mu_t)' M_t^{-1} (x_t - mu_t) - 1/2 log det M_t,
//! M_t = H_t H_t'
//! ```
//!
//! is evaluated at a frozen parameter `v` with the truncated history
//! `z_{t-1} = (x_{t-1}, ..., x_1, 0, ...)`. Its gradient and Hessian are
//! analytic: the latent-state recursions (VARMA residuals, GARCH
//! volatilities) are differentiated forward alongside the state itself.

mod gaussian;
mod recursion;
pub mod check;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub use recursion::Workspace;

/// Model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// `x_t = a + sum A_j x_{t-j} + eta_t + sum B_j eta_{t-j}`, `eta_t = omega eps_t`.
    Varma,
    /// `x_t = diag(h_t)^{1/2} Omega^{1/2} eps_t`,
    /// `h_t = c0 + sum C_j (x_{t-j} . x_{t-j}) + sum D_j h_{t-j}`.
    Mgarch,
}

/// Observed `m`-dimensional sample `x_1..x_T` on the grid `tau_t = t / T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    m: usize,
    data: Vec<f64>,
}

impl Series {
    /// Builds a series from time-major data (`x_1` first, each of length `m`).
    pub fn new(m: usize, data: Vec<f64>) -> Result<Self> {
        if m == 0 || data.is_empty() || data.len() % m != 0 {
            return Err(Error::InvalidSeries(format!(
                "{} values cannot form {m}-dimensional observations",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSeries(format!(
                "non-finite entry at observation {}",
                i / m + 1
            )));
        }
        Ok(Self { m, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidSeries("ragged rows".into()));
        }
        Self::new(m, rows.iter().flatten().copied().collect())
    }

    /// Columns of `values` are observations.
    pub fn from_matrix(values: &DMatrix<f64>) -> Result<Self> {
        Self::new(values.nrows(), values.as_slice().to_vec())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len() / self.m
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Observation `x_t` for `1 <= t <= T`.
    #[inline]
    pub fn obs(&self, t: usize) -> &[f64] {
        &self.data[(t - 1) * self.m..t * self.m]
    }

    #[inline]
    pub fn tau(&self, t: usize) -> f64 {
        t as f64 / self.len() as f64
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `m x T` matrix view with one observation per column.
    pub fn values(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.m, self.len(), &self.data)
    }

    /// Series with components reordered so that new component `i` is old
    /// component `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(self.data.len());
        for t in 1..=self.len() {
            let x = self.obs(t);
            data.extend(perm.iter().map(|&i| x[i]));
        }
        Self::new(self.m, data)
    }
}

/// Linear restriction `vec(A_1..A_p, B_1..B_q) = R gamma` on VARMA
/// coefficient matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Restriction {
    matrix: DMatrix<f64>,
    names: Vec<String>,
    groups: Vec<(String, Vec<usize>)>,
}

impl Restriction {
    /// `matrix` is `m^2 (p + q) x n_free` with full column rank.
    pub fn new(matrix: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        if names.len() != matrix.ncols() {
            return Err(Error::InvalidSpec(
                "restriction needs one name per column".into(),
            ));
        }
        let sv = matrix.clone().svd(false, false).singular_values;
        let smax = sv.max();
        if matrix.ncols() > matrix.nrows() || !(sv.min() > 1e-10 * smax.max(1.0)) {
            return Err(Error::InvalidSpec(
                "restriction matrix lacks full column rank".into(),
            ));
        }
        let groups = (0..names.len()).map(|i| (names[i].clone(), vec![i])).collect();
        Ok(Self {
            matrix,
            names,
            groups,
        })
    }

    /// Names coefficient groups (indices into the free parameters).
    pub fn with_groups(mut self, groups: Vec<(String, Vec<usize>)>) -> Self {
        self.groups = groups;
        self
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn n_free(&self) -> usize {
        self.matrix.ncols()
    }

    /// Final-equations form: `A_j = a_j I_m`, `B_j` unrestricted.
    pub fn final_equations(m: usize, p: usize, q: usize) -> Result<Self> {
        let mm = m * m;
        let rows = mm * (p + q);
        let cols = p + mm * q;
        let mut r = DMatrix::zeros(rows, cols);
        let mut names = Vec::with_capacity(cols);
        let mut groups = Vec::new();
        for j in 0..p {
            for i in 0..m {
                r[(j * mm + i * m + i, j)] = 1.0;
            }
            names.push(format!("a{}", j + 1));
            groups.push((format!("a{}", j + 1), vec![j]));
        }
        for j in 0..q {
            let mut idx = Vec::with_capacity(mm);
            for c in 0..m {
                for rr in 0..m {
                    let col = p + j * mm + c * m + rr;
                    r[((p + j) * mm + c * m + rr, col)] = 1.0;
                    names.push(format!("B{}_{}{}", j + 1, rr + 1, c + 1));
                    idx.push(col);
                }
            }
            groups.push((format!("B{}", j + 1), idx));
        }
        Ok(Self::new(r, names)?.with_groups(groups))
    }
}

/// Model family, orders and parameter layout.
///
/// Layout of `theta`:
/// - VARMA: `[a (if intercept)] [gamma or vec(A_1..A_p, B_1..B_q)] [vech(omega)]`
///   where `omega` is the lower-triangular factor of the innovation covariance
///   stored row by row (`omega_11, omega_21, omega_22, ...`).
/// - MGARCH: `[c0] [vec(C_1..C_p)] [vec(D_1..D_q)] [rho]` with the strict lower
///   correlations stored row by row (`rho_21, rho_31, rho_32, ...`).
///
/// `vec` is column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub family: Family,
    pub m: usize,
    pub p: usize,
    pub q: usize,
    pub intercept: bool,
    pub restriction: Option<Restriction>,
    /// Latent-state memory: when set, the per-observation recursion for `t`
    /// restarts from its pre-sample initialisation at `t - horizon + 1`
    /// (observed lags are kept). `None` runs the recursion from `t = 1`.
    pub horizon: Option<usize>,
}

/// A named contiguous-or-not set of parameter positions.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroup {
    pub name: String,
    pub indices: Vec<usize>,
}

impl ModelSpec {
    pub fn varma(m: usize, p: usize, q: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidSpec("dimension m must be positive".into()));
        }
        Ok(Self {
            family: Family::Varma,
            m,
            p,
            q,
            intercept: false,
            restriction: None,
            horizon: None,
        })
    }

    pub fn mgarch(m: usize, p: usize, q: usize) -> Result<Self> {
        if m == 0 || p == 0 {
            return Err(Error::InvalidSpec(
                "MGARCH needs m >= 1 and ARCH order p >= 1".into(),
            ));
        }
        Ok(Self {
            family: Family::Mgarch,
            m,
            p,
            q,
            intercept: false,
            restriction: None,
            horizon: None,
        })
    }

    pub fn with_intercept(mut self, intercept: bool) -> Self {
        self.intercept = intercept;
        self
    }

    pub fn with_horizon(mut self, horizon: Option<usize>) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_restriction(mut self, r: Restriction) -> Result<Self> {
        if self.family != Family::Varma {
            return Err(Error::InvalidSpec(
                "restrictions apply to VARMA coefficients only".into(),
            ));
        }
        if r.matrix.nrows() != self.m * self.m * (self.p + self.q) {
            return Err(Error::InvalidSpec(format!(
                "restriction has {} rows, expected {}",
                r.matrix.nrows(),
                self.m * self.m * (self.p + self.q)
            )));
        }
        self.restriction = Some(r);
        Ok(self)
    }

    /// VARMA in final-equations form (`A_j = a_j I_m`).
    pub fn final_equations(m: usize, p: usize, q: usize) -> Result<Self> {
        Self::varma(m, p, q)?.with_restriction(Restriction::final_equations(m, p, q)?)
    }

    pub(crate) fn n_intercept(&self) -> usize {
        if self.family == Family::Varma && self.intercept {
            self.m
        } else {
            0
        }
    }

    /// Number of coefficient parameters entering the mean (VARMA) or the
    /// volatility recursion (MGARCH), excluding intercept / `c0`.
    pub(crate) fn n_coef(&self) -> usize {
        match (&self.family, &self.restriction) {
            (Family::Varma, Some(r)) => r.n_free(),
            _ => self.m * self.m * (self.p + self.q),
        }
    }

    pub(crate) fn n_cov(&self) -> usize {
        match self.family {
            Family::Varma => self.m * (self.m + 1) / 2,
            Family::Mgarch => self.m * (self.m - 1) / 2,
        }
    }

    /// Offset of the first covariance parameter (`omega` or `rho`).
    pub(crate) fn cov_offset(&self) -> usize {
        match self.family {
            Family::Varma => self.n_intercept() + self.n_coef(),
            Family::Mgarch => self.m + self.n_coef(),
        }
    }

    /// Total parameter count `d`.
    pub fn dim(&self) -> usize {
        self.cov_offset() + self.n_cov()
    }

    /// Minimum sample size accepted by the estimators.
    pub fn min_sample(&self) -> usize {
        self.m * (self.p + self.q) + 10
    }

    pub fn param_names(&self) -> Vec<String> {
        let m = self.m;
        let mut names = Vec::with_capacity(self.dim());
        let mat_names = |prefix: &str, j: usize, out: &mut Vec<String>| {
            for c in 0..m {
                for r in 0..m {
                    out.push(format!("{prefix}{}_{}{}", j + 1, r + 1, c + 1));
                }
            }
        };
        match self.family {
            Family::Varma => {
                for i in 0..self.n_intercept() {
                    names.push(format!("a_{}", i + 1));
                }
                match &self.restriction {
                    Some(r) => names.extend(r.names.iter().cloned()),
                    None => {
                        for j in 0..self.p {
                            mat_names("A", j, &mut names);
                        }
                        for j in 0..self.q {
                            mat_names("B", j, &mut names);
                        }
                    }
                }
                for r in 0..m {
                    for c in 0..=r {
                        names.push(format!("omega_{}{}", r + 1, c + 1));
                    }
                }
            }
            Family::Mgarch => {
                for i in 0..m {
                    names.push(format!("c0_{}", i + 1));
                }
                for j in 0..self.p {
                    mat_names("C", j, &mut names);
                }
                for j in 0..self.q {
                    mat_names("D", j, &mut names);
                }
                for r in 1..m {
                    for c in 0..r {
                        names.push(format!("rho_{}{}", r + 1, c + 1));
                    }
                }
            }
        }
        names
    }

    /// Coefficient groups in layout order (e.g. `a1, a2, B1, Omega` for a
    /// final-equations VARMA(2,1)).
    pub fn groups(&self) -> Vec<ParamGroup> {
        let m = self.m;
        let mm = m * m;
        let mut out = Vec::new();
        let block = |name: String, start: usize, len: usize| ParamGroup {
            name,
            indices: (start..start + len).collect(),
        };
        match self.family {
            Family::Varma => {
                let ni = self.n_intercept();
                if ni > 0 {
                    out.push(block("a".into(), 0, ni));
                }
                match &self.restriction {
                    Some(r) => {
                        for (name, idx) in &r.groups {
                            out.push(ParamGroup {
                                name: name.clone(),
                                indices: idx.iter().map(|i| i + ni).collect(),
                            });
                        }
                    }
                    None => {
                        for j in 0..self.p {
                            out.push(block(format!("A{}", j + 1), ni + j * mm, mm));
                        }
                        for j in 0..self.q {
                            out.push(block(format!("B{}", j + 1), ni + (self.p + j) * mm, mm));
                        }
                    }
                }
                out.push(block("Omega".into(), self.cov_offset(), self.n_cov()));
            }
            Family::Mgarch => {
                out.push(block("c0".into(), 0, m));
                for j in 0..self.p {
                    out.push(block(format!("C{}", j + 1), m + j * mm, mm));
                }
                for j in 0..self.q {
                    out.push(block(format!("D{}", j + 1), m + (self.p + j) * mm, mm));
                }
                if self.n_cov() > 0 {
                    out.push(block("Omega".into(), self.cov_offset(), self.n_cov()));
                }
            }
        }
        out
    }

    /// Box bounds `(lower, upper)` on a level parameter vector. These define
    /// the feasible region used by the optimizer.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let mut lo = vec![f64::NEG_INFINITY; d];
        let mut hi = vec![f64::INFINITY; d];
        match self.family {
            Family::Varma => {
                let off = self.cov_offset();
                let mut k = off;
                for r in 0..self.m {
                    for c in 0..=r {
                        if r == c {
                            lo[k] = OMEGA_DIAG_FLOOR;
                        }
                        k += 1;
                    }
                }
            }
            Family::Mgarch => {
                for v in lo.iter_mut().take(self.m) {
                    *v = C0_FLOOR;
                }
                for v in lo.iter_mut().take(self.cov_offset()).skip(self.m) {
                    *v = 0.0;
                }
                for k in self.cov_offset()..d {
                    lo[k] = -RHO_MAX;
                    hi[k] = RHO_MAX;
                }
            }
        }
        (lo, hi)
    }

    /// Moves `theta` into the box of [`ModelSpec::bounds`].
    pub fn project(&self, theta: &mut [f64]) {
        let (lo, hi) = self.bounds();
        for ((v, l), h) in theta.iter_mut().zip(lo).zip(hi) {
            *v = v.clamp(l, h);
        }
    }

    pub(crate) fn start_of(&self, t: usize) -> usize {
        let memoryless = match self.family {
            Family::Varma => self.q == 0,
            Family::Mgarch => self.q == 0,
        };
        if memoryless {
            return t;
        }
        match self.horizon {
            Some(l) if l > 0 && t > l => t + 1 - l,
            _ => 1,
        }
    }

    /// Index map of the layout induced by relabeling the series components
    /// (`new i = old perm[i]`): `new_theta[k] = old_theta[map[k]]`. Only the
    /// MGARCH layout permutes entrywise; a relabeled Cholesky factor is no
    /// longer lower triangular.
    pub fn layout_permutation(&self, perm: &[usize]) -> Result<Vec<usize>> {
        if self.family != Family::Mgarch || perm.len() != self.m {
            return Err(Error::InvalidSpec(
                "component relabeling maps onto the layout for MGARCH only".into(),
            ));
        }
        let m = self.m;
        let mm = m * m;
        let mut map = Vec::with_capacity(self.dim());
        map.extend(perm.iter().copied());
        for j in 0..self.p + self.q {
            for c in 0..m {
                for r in 0..m {
                    map.push(m + j * mm + perm[c] * m + perm[r]);
                }
            }
        }
        let off = self.cov_offset();
        let rho_index = |a: usize, b: usize| {
            let (r, c) = if a > b { (a, b) } else { (b, a) };
            off + r * (r - 1) / 2 + c
        };
        for r in 1..m {
            for c in 0..r {
                map.push(rho_index(perm[r], perm[c]));
            }
        }
        Ok(map)
    }
}

pub(crate) const OMEGA_DIAG_FLOOR: f64 = 1e-6;
pub(crate) const C0_FLOOR: f64 = 1e-8;
pub(crate) const RHO_MAX: f64 = 0.999;

/// A parameter vector `theta` in the layout of its [`ModelSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamPoint(pub DVector<f64>);

impl ParamPoint {
    pub fn new(spec: &ModelSpec, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != spec.dim() {
            return Err(Error::InvalidParams(format!(
                "expected {} parameters, got {}",
                spec.dim(),
                theta.len()
            )));
        }
        let p = Self(DVector::from_vec(theta));
        p.validate(spec)?;
        Ok(p)
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    /// Checks the family invariants: positive `omega` diagonal (VARMA);
    /// positive `c0`, nonnegative `C_j, D_j`, and a positive definite
    /// correlation matrix (MGARCH).
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        validate_theta(spec, self.as_slice())
    }
}

pub(crate) fn validate_theta(spec: &ModelSpec, th: &[f64]) -> Result<()> {
    if th.len() != spec.dim() || th.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParams("wrong length or non-finite entry".into()));
    }
    let off = spec.cov_offset();
    match spec.family {
        Family::Varma => {
            let mut k = off;
            for r in 0..spec.m {
                for c in 0..=r {
                    if r == c && th[k] <= 0.0 {
                        return Err(Error::InvalidParams(format!(
                            "omega_{}{} must be positive",
                            r + 1,
                            r + 1
                        )));
                    }
                    k += 1;
                }
            }
        }
        Family::Mgarch => {
            if th[..spec.m].iter().any(|&v| v <= 0.0) {
                return Err(Error::InvalidParams("c0 must be positive".into()));
            }
            if th[spec.m..off].iter().any(|&v| v < 0.0) {
                return Err(Error::InvalidParams(
                    "ARCH/GARCH coefficients must be nonnegative".into(),
                ));
            }
            if th[off..].iter().any(|&v| v.abs() >= 1.0) {
                return Err(Error::InvalidParams("|rho| must be below one".into()));
            }
            if correlation_matrix(spec, th).cholesky().is_none() {
                return Err(Error::InvalidParams(
                    "correlation matrix not positive definite".into(),
                ));
            }
        }
    }
    Ok(())
}

/// Correlation matrix `Omega` from the MGARCH layout.
pub(crate) fn correlation_matrix(spec: &ModelSpec, th: &[f64]) -> DMatrix<f64> {
    let m = spec.m;
    let off = spec.cov_offset();
    let mut o = DMatrix::identity(m, m);
    let mut k = off;
    for r in 1..m {
        for c in 0..r {
            o[(r, c)] = th[k];
            o[(c, r)] = th[k];
            k += 1;
        }
    }
    o
}

/// Unpacked VARMA coefficients.
#[derive(Debug, Clone)]
pub struct VarmaCoefficients {
    pub a: DVector<f64>,
    pub ar: Vec<DMatrix<f64>>,
    pub ma: Vec<DMatrix<f64>>,
    /// Lower-triangular innovation factor.
    pub omega: DMatrix<f64>,
}

/// Unpacked MGARCH coefficients.
#[derive(Debug, Clone)]
pub struct GarchCoefficients {
    pub c0: DVector<f64>,
    pub arch: Vec<DMatrix<f64>>,
    pub garch: Vec<DMatrix<f64>>,
    pub corr: DMatrix<f64>,
}

impl ModelSpec {
    /// Full (unrestricted) `vec(A_1..A_p, B_1..B_q)` implied by `theta`.
    pub(crate) fn full_coef(&self, theta: &[f64]) -> Vec<f64> {
        let ni = self.n_intercept();
        let nc = self.n_coef();
        let coef = &theta[ni..ni + nc];
        match &self.restriction {
            Some(r) => (&r.matrix * DVector::from_column_slice(coef)).as_slice().to_vec(),
            None => coef.to_vec(),
        }
    }

    pub fn varma_coefficients(&self, theta: &[f64]) -> VarmaCoefficients {
        let m = self.m;
        let mm = m * m;
        let full = self.full_coef(theta);
        let ni = self.n_intercept();
        let a = if ni > 0 {
            DVector::from_column_slice(&theta[..m])
        } else {
            DVector::zeros(m)
        };
        let mat = |j: usize| DMatrix::from_column_slice(m, m, &full[j * mm..(j + 1) * mm]);
        let off = self.cov_offset();
        let mut omega = DMatrix::zeros(m, m);
        let mut k = off;
        for r in 0..m {
            for c in 0..=r {
                omega[(r, c)] = theta[k];
                k += 1;
            }
        }
        VarmaCoefficients {
            a,
            ar: (0..self.p).map(mat).collect(),
            ma: (self.p..self.p + self.q).map(mat).collect(),
            omega,
        }
    }

    pub fn garch_coefficients(&self, theta: &[f64]) -> GarchCoefficients {
        let m = self.m;
        let mm = m * m;
        let mat = |j: usize| DMatrix::from_column_slice(m, m, &theta[m + j * mm..m + (j + 1) * mm]);
        GarchCoefficients {
            c0: DVector::from_column_slice(&theta[..m]),
            arch: (0..self.p).map(mat).collect(),
            garch: (self.p..self.p + self.q).map(mat).collect(),
            corr: correlation_matrix(self, theta),
        }
    }

    /// Packs VARMA coefficients into an unrestricted layout vector.
    pub fn pack_varma(&self, c: &VarmaCoefficients) -> Result<Vec<f64>> {
        if self.restriction.is_some() || self.family != Family::Varma {
            return Err(Error::InvalidSpec(
                "pack_varma needs an unrestricted VARMA spec".into(),
            ));
        }
        let mut th = Vec::with_capacity(self.dim());
        if self.intercept {
            th.extend(c.a.iter());
        }
        for mat in c.ar.iter().chain(c.ma.iter()) {
            th.extend(mat.iter());
        }
        for r in 0..self.m {
            for cc in 0..=r {
                th.push(c.omega[(r, cc)]);
            }
        }
        Ok(th)
    }

    pub fn pack_garch(&self, c: &GarchCoefficients) -> Vec<f64> {
        let mut th = Vec::with_capacity(self.dim());
        th.extend(c.c0.iter());
        for mat in c.arch.iter().chain(c.garch.iter()) {
            th.extend(mat.iter());
        }
        for r in 1..self.m {
            for cc in 0..r {
                th.push(c.corr[(r, cc)]);
            }
        }
        th
    }
}

/// Per-observation likelihood contribution with derivatives.
#[derive(Debug, Clone)]
pub struct ModelEval {
    pub loglik: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

/// How many derivatives to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Order {
    Value = 0,
    Gradient = 1,
    Hessian = 2,
}

/// Output buffer for one observation; `hess` is `d x d` row-major.
#[derive(Debug, Clone)]
pub struct ObsOut {
    pub loglik: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
}

impl ObsOut {
    pub fn new(d: usize) -> Self {
        Self {
            loglik: 0.0,
            grad: vec![0.0; d],
            hess: vec![0.0; d * d],
        }
    }
}

fn check_t(series: &Series, spec: &ModelSpec, t: usize) -> Result<()> {
    if series.dim() != spec.m {
        return Err(Error::InvalidSeries(format!(
            "series has dimension {}, model expects {}",
            series.dim(),
            spec.m
        )));
    }
    if t == 0 || t > series.len() {
        return Err(Error::Precondition(format!(
            "t={t} outside 1..={}",
            series.len()
        )));
    }
    Ok(())
}

/// `l(x_t, z_{t-1}; vartheta)`.
pub fn loglik_at(spec: &ModelSpec, series: &Series, t: usize, theta: &ParamPoint) -> Result<f64> {
    Ok(eval_at(spec, series, t, theta, Order::Value)?.loglik)
}

/// Analytic score of `l(x_t, z_{t-1}; vartheta)`.
pub fn grad_at(
    spec: &ModelSpec,
    series: &Series,
    t: usize,
    theta: &ParamPoint,
) -> Result<DVector<f64>> {
    Ok(eval_at(spec, series, t, theta, Order::Gradient)?.grad)
}

/// Analytic Hessian of `l(x_t, z_{t-1}; vartheta)`, symmetrized.
pub fn hess_at(
    spec: &ModelSpec,
    series: &Series,
    t: usize,
    theta: &ParamPoint,
) -> Result<DMatrix<f64>> {
    Ok(eval_at(spec, series, t, theta, Order::Hessian)?.hess)
}

/// Value, gradient and Hessian at one observation.
pub fn eval_at(
    spec: &ModelSpec,
    series: &Series,
    t: usize,
    theta: &ParamPoint,
    order: Order,
) -> Result<ModelEval> {
    check_t(series, spec, t)?;
    let d = spec.dim();
    let mut ws = Workspace::new(spec);
    let mut out = ObsOut::new(d);
    ws.eval_obs(spec, series, t, theta.as_slice(), order, &mut out)?;
    Ok(ModelEval {
        loglik: out.loglik,
        grad: DVector::from_vec(out.grad),
        hess: DMatrix::from_row_slice(d, d, &out.hess),
    })
}

/// VARMA residuals `eta_t(vartheta)` for `t = 1..T` (columns), with
/// zero pre-sample values.
pub fn varma_residuals(spec: &ModelSpec, series: &Series, theta: &ParamPoint) -> Result<DMatrix<f64>> {
    if spec.family != Family::Varma {
        return Err(Error::InvalidSpec("varma_residuals needs a VARMA spec".into()));
    }
    check_t(series, spec, 1)?;
    Ok(recursion::varma_states(spec, series, theta.as_slice()))
}

/// GARCH conditional variances `h_t(vartheta)` for `t = 1..T` (columns).
pub fn garch_volatility(spec: &ModelSpec, series: &Series, theta: &ParamPoint) -> Result<DMatrix<f64>> {
    if spec.family != Family::Mgarch {
        return Err(Error::InvalidSpec("garch_volatility needs an MGARCH spec".into()));
    }
    check_t(series, spec, 1)?;
    let h = recursion::garch_states(spec, series, theta.as_slice());
    for (t, col) in h.column_iter().enumerate() {
        if col.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::NonPositiveVolatility { t: t + 1 });
        }
    }
    Ok(h)
}

/// Runs the recursion once at a fixed `theta` over `t = 1..T` and hands
/// every observation's contribution to `sink`.
pub fn eval_path<F>(
    spec: &ModelSpec,
    series: &Series,
    theta: &[f64],
    order: Order,
    mut sink: F,
) -> Result<()>
where
    F: FnMut(usize, &ObsOut),
{
    check_t(series, spec, 1)?;
    let mut ws = Workspace::new(spec);
    ws.eval_range(spec, series, theta, 1, series.len(), 1, order, &mut sink)
}

/// Diagnostic check of the frozen-parameter stationarity conditions:
/// VARMA companion spectral radius (AR and MA sides) below one; MGARCH
/// spectral radius of `sum C_j + sum D_j` below one.
pub fn stationarity_margin(spec: &ModelSpec, theta: &[f64]) -> f64 {
    let companion_radius = |mats: &[DMatrix<f64>], sign: f64| -> f64 {
        let m = spec.m;
        let k = mats.len();
        if k == 0 {
            return 0.0;
        }
        let mut comp = DMatrix::zeros(m * k, m * k);
        for (j, a) in mats.iter().enumerate() {
            comp.view_mut((0, j * m), (m, m)).copy_from(&(a * sign));
        }
        for i in m..m * k {
            comp[(i, i - m)] = 1.0;
        }
        comp.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
    };
    match spec.family {
        Family::Varma => {
            let c = spec.varma_coefficients(theta);
            let r_ar = companion_radius(&c.ar, 1.0);
            let r_ma = companion_radius(&c.ma, -1.0);
            r_ar.max(r_ma)
        }
        Family::Mgarch => {
            let c = spec.garch_coefficients(theta);
            let mut s = DMatrix::zeros(spec.m, spec.m);
            for a in c.arch.iter().chain(c.garch.iter()) {
                s += a;
            }
            s.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
        }
    }
}

#[cfg(test)]
mod tests;
