//! Kernel functions, exact and boundary-truncated moments, local linear
//! weights and the jackknife (fourth-order) kernel.
//!
//! Everything here is deterministic and allocation-light; the estimation and
//! inference layers call into it from inner loops.

use crate::error::{Error, Result};

/// Kernel family. Only the Epanechnikov kernel is built in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelShape {
    #[default]
    Epanechnikov,
}

/// A symmetric, nonnegative kernel supported on `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct KernelSpec {
    pub shape: KernelShape,
}

/// A smoothing bandwidth expressed as a fraction of the unit interval.
///
/// Construction enforces `0 < h <= 0.5` so that the interior region
/// `[h, 1 - h]` is nonempty.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Bandwidth(f64);

impl Bandwidth {
    pub fn new(h: f64) -> Result<Self> {
        if h.is_finite() && h > 0.0 && h <= 0.5 {
            Ok(Self(h))
        } else {
            Err(Error::InvalidBandwidth(h))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// The companion bandwidth `h / sqrt(2)` used by the jackknife.
    pub fn halved(self) -> Self {
        Self(self.0 / std::f64::consts::SQRT_2)
    }
}

impl KernelSpec {
    pub const EPANECHNIKOV: KernelSpec = KernelSpec {
        shape: KernelShape::Epanechnikov,
    };

    /// `K(u)`, zero outside `[-1, 1]`.
    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        match self.shape {
            KernelShape::Epanechnikov => {
                if u.abs() <= 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
        }
    }

    /// `K'(u)` on the open support, zero outside.
    #[inline]
    pub fn derivative(&self, u: f64) -> f64 {
        match self.shape {
            KernelShape::Epanechnikov => {
                if u.abs() < 1.0 {
                    -1.5 * u
                } else {
                    0.0
                }
            }
        }
    }

    /// Scaled kernel `K_h(x) = K(x / h) / h`.
    #[inline]
    pub fn scaled(&self, x: f64, h: f64) -> f64 {
        self.eval(x / h) / h
    }

    /// `K~(u) = 2 sqrt(2) K(sqrt(2) u) - K(u)`, the kernel implied by the
    /// jackknife combination of bandwidths `h` and `h / sqrt(2)`.
    #[inline]
    pub fn fourth_order(&self, u: f64) -> f64 {
        let s = std::f64::consts::SQRT_2;
        2.0 * s * self.eval(s * u) - self.eval(u)
    }

    /// `int_a^b u^k K(u) du` (or of `K(u)^2` when `squared`), with the
    /// limits clipped to the support.
    pub fn partial_moment(&self, k: u32, squared: bool, a: f64, b: f64) -> f64 {
        let lo = a.max(-1.0);
        let hi = b.min(1.0);
        if hi <= lo {
            return 0.0;
        }
        match self.shape {
            KernelShape::Epanechnikov => {
                let pw = |n: u32| (hi.powi(n as i32) - lo.powi(n as i32)) / n as f64;
                if squared {
                    0.5625 * (pw(k + 1) - 2.0 * pw(k + 3) + pw(k + 5))
                } else {
                    0.75 * (pw(k + 1) - pw(k + 3))
                }
            }
        }
    }

    /// Full-support moment: `c~_k` (`squared = false`) or `v~_k`.
    pub fn moment(&self, k: u32, squared: bool) -> f64 {
        self.partial_moment(k, squared, -1.0, 1.0)
    }

    /// `int |K'(u)|^2 du`.
    pub fn derivative_energy(&self) -> f64 {
        integrate(|u| self.derivative(u).powi(2), -1.0, 1.0, 1e-13)
    }

    /// `v_0 = int K~(u)^2 du`, the variance constant of the bias-corrected
    /// estimator.
    pub fn fourth_order_energy(&self) -> f64 {
        let s = std::f64::consts::SQRT_2;
        let f = |u: f64| self.fourth_order(u).powi(2);
        // Split at the kink of the inner kernel.
        integrate(f, -1.0, -1.0 / s, 1e-13)
            + integrate(f, -1.0 / s, 1.0 / s, 1e-13)
            + integrate(f, 1.0 / s, 1.0, 1e-13)
    }

    /// Boundary moments `c~_{k,h}(tau) = int_{-tau/h}^{(1-tau)/h} u^k K(u) du`
    /// for `k = 0..=k_max`.
    pub fn boundary_moments(&self, tau: f64, h: Bandwidth, k_max: u32) -> Vec<f64> {
        let h = h.value();
        let a = -tau / h;
        let b = (1.0 - tau) / h;
        (0..=k_max)
            .map(|k| self.partial_moment(k, false, a, b))
            .collect()
    }

    /// Local linear weights `omega_{t,h}(tau)` on the grid `tau_t = t / T`.
    pub fn local_linear_weights(
        &self,
        tau: f64,
        h: Bandwidth,
        n_obs: usize,
    ) -> Result<LocalLinearWeights> {
        let c = self.boundary_moments(tau, h, 3);
        let denom = c[0] * c[2] - c[1] * c[1];
        let hv = h.value();
        // A window holding fewer than two design points cannot support a
        // local linear fit regardless of the continuous moments.
        let support = (1..=n_obs)
            .filter(|&t| self.eval((t as f64 / n_obs as f64 - tau) / hv) > 1e-10)
            .count();
        if !(denom > 1e-12) || support < 2 {
            return Err(Error::DegenerateDesign { tau, h: hv });
        }
        let weights = (1..=n_obs)
            .map(|t| {
                let x = t as f64 / n_obs as f64 - tau;
                let k = self.scaled(x, hv);
                if k == 0.0 {
                    0.0
                } else {
                    k * (c[2] - (x / hv) * c[1]) / denom
                }
            })
            .collect();
        let bias_factor = (c[2] * c[2] - c[1] * c[3]) / denom;
        Ok(LocalLinearWeights {
            tau,
            h,
            boundary_moments: [c[0], c[1], c[2], c[3]],
            weights,
            bias_factor,
        })
    }
}

/// Local linear equivalent-kernel weights at one grid point.
#[derive(Debug, Clone)]
pub struct LocalLinearWeights {
    pub tau: f64,
    pub h: Bandwidth,
    /// `c~_{k,h}(tau)` for `k = 0..=3`.
    pub boundary_moments: [f64; 4],
    /// `omega_{t,h}(tau)`, index `t - 1`.
    pub weights: Vec<f64>,
    /// `b_h(tau)`.
    pub bias_factor: f64,
}

// Gauss-Kronrod 7/15 nodes and weights on [-1, 1].
const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const GK_WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = GK_WK[7] * fc;
    let mut gauss = GK_WG[3] * fc;
    for i in 0..7 {
        let x = r * GK_NODES[i];
        let s = f(c - x) + f(c + x);
        kron += GK_WK[i] * s;
        if i % 2 == 1 {
            gauss += GK_WG[i / 2] * s;
        }
    }
    (kron * r, ((kron - gauss) * r).abs())
}

/// Adaptive Gauss-Kronrod quadrature of `f` over `[a, b]` to absolute
/// tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    fn recurse<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (val, err) = gk15(f, a, b);
        if err <= tol || depth >= 48 || (b - a).abs() < 1e-14 {
            return val;
        }
        let m = 0.5 * (a + b);
        recurse(f, a, m, 0.5 * tol, depth + 1) + recurse(f, m, b, 0.5 * tol, depth + 1)
    }
    if a == b {
        return 0.0;
    }
    recurse(&f, a, b, tol, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    const K: KernelSpec = KernelSpec::EPANECHNIKOV;

    fn quad_moment(k: i32, squared: bool, a: f64, b: f64) -> f64 {
        integrate(
            |u| {
                let v = K.eval(u);
                u.powi(k) * if squared { v * v } else { v }
            },
            a.max(-1.0),
            b.min(1.0),
            1e-13,
        )
    }

    #[test]
    fn kernel_values() {
        assert_eq!(K.eval(0.0), 0.75);
        assert_eq!(K.eval(1.0), 0.0);
        assert_eq!(K.eval(-1.3), 0.0);
        assert!((K.eval(0.5) - 0.5625).abs() < 1e-15);
    }

    #[test]
    fn kernel_shape_invariants() {
        assert!((integrate(|u| K.eval(u), -1.0, 1.0, 1e-13) - 1.0).abs() < 1e-10);
        for i in 0..=200 {
            let u = -1.2 + 2.4 * i as f64 / 200.0;
            assert!(K.eval(u) >= 0.0);
            assert_eq!(K.eval(u), K.eval(-u));
        }
    }

    #[test]
    fn closed_form_moments_match_quadrature() {
        for k in 0..=4 {
            for sq in [false, true] {
                let cf = K.moment(k, sq);
                let q = quad_moment(k as i32, sq, -1.0, 1.0);
                assert!((cf - q).abs() < 1e-10, "k={k} sq={sq}: {cf} vs {q}");
            }
        }
        assert_eq!(K.moment(0, false), 1.0);
        assert!(K.moment(1, false).abs() < 1e-15);
        assert!((K.moment(2, false) - 0.2).abs() < 1e-14);
        assert!((K.moment(0, true) - 0.6).abs() < 1e-14);
    }

    #[test]
    fn fourth_order_kernel_values_and_moments() {
        let s = std::f64::consts::SQRT_2;
        assert!((K.fourth_order(0.0) - 0.75 * (2.0 * s - 1.0)).abs() < 1e-14);
        assert!((K.fourth_order(0.0) - 1.371_32).abs() < 1e-5);
        assert!((K.fourth_order(0.9) + 0.1425).abs() < 1e-14);
        let m = |k: i32| {
            let f = |u: f64| u.powi(k) * K.fourth_order(u);
            integrate(f, -1.0, -1.0 / s, 1e-13)
                + integrate(f, -1.0 / s, 1.0 / s, 1e-13)
                + integrate(f, 1.0 / s, 1.0, 1e-13)
        };
        assert!((m(0) - 1.0).abs() < 1e-8);
        assert!(m(1).abs() < 1e-8);
        assert!(m(2).abs() < 1e-8);
    }

    #[test]
    fn boundary_moment_examples() {
        let h = Bandwidth::new(0.1).unwrap();
        assert!((K.boundary_moments(0.5, h, 0)[0] - 1.0).abs() < 1e-14);
        let c = K.boundary_moments(0.0, h, 1);
        assert!((c[0] - 0.5).abs() < 1e-14);
        // int_0^1 u 0.75 (1 - u^2) du = 3/16
        assert!((c[1] - 0.1875).abs() < 1e-14);
        assert!((c[1] - quad_moment(1, false, 0.0, 1.0)).abs() < 1e-12);
        // Quadrature cross-check on a partially clipped window.
        let hb = Bandwidth::new(0.2).unwrap();
        let c = K.boundary_moments(0.1, hb, 4);
        for (k, ck) in c.iter().enumerate() {
            let q = quad_moment(k as i32, false, -0.5, 4.5);
            assert!((ck - q).abs() < 1e-10);
        }
    }

    #[test]
    fn derivative_energy_epanechnikov() {
        assert!((K.derivative_energy() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn bandwidth_guard() {
        assert!(Bandwidth::new(0.0).is_err());
        assert!(Bandwidth::new(0.5).is_ok());
        assert!(Bandwidth::new(0.51).is_err());
        assert!(Bandwidth::new(f64::NAN).is_err());
        assert!(Bandwidth::new(0.3).is_ok());
    }

    #[test]
    fn interior_weights_equal_scaled_kernel() {
        let h = Bandwidth::new(0.2).unwrap();
        let w = K.local_linear_weights(0.5, h, 200).unwrap();
        assert!(w.boundary_moments[1].abs() < 1e-12);
        assert!((w.bias_factor - 0.2).abs() < 1e-8);
        for (i, wt) in w.weights.iter().enumerate() {
            let x = (i + 1) as f64 / 200.0 - 0.5;
            assert!((wt - K.scaled(x, 0.2)).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_zero_outside_window() {
        let h = Bandwidth::new(0.1).unwrap();
        let w = K.local_linear_weights(0.05, h, 300).unwrap();
        for (i, wt) in w.weights.iter().enumerate() {
            if ((i + 1) as f64 / 300.0 - 0.05).abs() > 0.1 {
                assert_eq!(*wt, 0.0);
            }
        }
    }

    #[test]
    fn weight_sums_and_first_moment() {
        let n = 500;
        for &hv in &[0.1, 0.25] {
            let h = Bandwidth::new(hv).unwrap();
            for &tau in &[0.0, 0.03, 0.2, 0.5, 0.9, 1.0] {
                let w = K.local_linear_weights(tau, h, n).unwrap();
                let tol = 5.0 / (n as f64 * hv);
                let s0: f64 = w.weights.iter().sum::<f64>() / n as f64;
                let s1: f64 = w
                    .weights
                    .iter()
                    .enumerate()
                    .map(|(i, wt)| wt * (((i + 1) as f64 / n as f64) - tau) / hv)
                    .sum::<f64>()
                    / n as f64;
                assert!((s0 - 1.0).abs() < tol, "tau={tau} h={hv} s0={s0}");
                assert!(s1.abs() < tol, "tau={tau} h={hv} s1={s1}");
            }
        }
    }

    #[test]
    fn weights_reproduce_linear_functions() {
        let n = 400;
        let hv = 0.15;
        let h = Bandwidth::new(hv).unwrap();
        let bound = 10.0 * (hv * hv + 1.0 / (n as f64 * hv));
        let g = |x: f64| 0.3 - 1.7 * x;
        for &tau in &[0.0, 0.1, 0.5, 0.85, 1.0] {
            let w = K.local_linear_weights(tau, h, n).unwrap();
            let est: f64 = w
                .weights
                .iter()
                .enumerate()
                .map(|(i, wt)| wt * g((i + 1) as f64 / n as f64))
                .sum::<f64>()
                / n as f64;
            assert!((est - g(tau)).abs() < bound);
        }
    }

    #[test]
    fn degenerate_design_when_window_too_narrow() {
        // h below the grid spacing leaves at most one design point.
        let h = Bandwidth::new(0.05).unwrap();
        assert!(matches!(
            K.local_linear_weights(0.5, h, 10),
            Err(Error::DegenerateDesign { .. })
        ));
    }
}
