use super::check::*;
use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn check_family(family: Family, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for cfg in 0..20 {
        let spec = random_spec(&mut rng, family);
        let th = random_theta(&mut rng, &spec);
        let x = random_series(&mut rng, spec.m, 40, 1.0);
        let t = rng.random_range(1..=40);
        let pp = ParamPoint::new(&spec, th.clone()).unwrap();
        let ev = eval_at(&spec, &x, t, &pp, Order::Hessian).unwrap();
        let g_fd = fd_grad(&spec, &x, t, &th, 2e-4).unwrap();
        let e = rel_err(ev.grad.as_slice(), &g_fd);
        assert!(e < 1e-5, "cfg {cfg} {spec:?}: gradient error {e}");
        let h_fd = fd_hess(&spec, &x, t, &th, 2e-4).unwrap();
        let h_an: Vec<f64> = ev.hess.transpose().as_slice().to_vec();
        let e = rel_err(&h_an, &h_fd);
        assert!(e < 1e-4, "cfg {cfg} {spec:?}: hessian error {e}");
        assert_eq!(ev.hess, ev.hess.transpose());
    }
}

#[test]
fn varma_derivatives_match_finite_differences() {
    check_family(Family::Varma, 11);
}

#[test]
fn mgarch_derivatives_match_finite_differences() {
    check_family(Family::Mgarch, 12);
}

fn white_noise_spec() -> (ModelSpec, ParamPoint) {
    let spec = ModelSpec::varma(2, 1, 0).unwrap();
    let th = vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0];
    let pp = ParamPoint::new(&spec, th).unwrap();
    (spec, pp)
}

#[test]
fn loglik_identity_covariance() {
    let (spec, pp) = white_noise_spec();
    let x = Series::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
    assert_eq!(loglik_at(&spec, &x, 1, &pp).unwrap(), 0.0);
    assert!((loglik_at(&spec, &x, 2, &pp).unwrap() + 1.0).abs() < 1e-15);
}

#[test]
fn garch_recursion_example() {
    let spec = ModelSpec::mgarch(1, 1, 1).unwrap();
    let pp = ParamPoint::new(&spec, vec![1.0, 0.3, 0.5]).unwrap();
    let x = Series::new(1, vec![2.0, 0.0]).unwrap();
    let l = loglik_at(&spec, &x, 2, &pp).unwrap();
    assert!((l + 0.5 * 2.7f64.ln()).abs() < 1e-14);
    let h = garch_volatility(&spec, &x, &pp).unwrap();
    assert!((h[(0, 0)] - 1.0).abs() < 1e-15);
    assert!((h[(0, 1)] - 2.7).abs() < 1e-14);
}

#[test]
fn garch_constant_and_fixed_point() {
    let spec = ModelSpec::mgarch(1, 1, 1).unwrap();
    let x = Series::new(1, vec![0.0; 80]).unwrap();
    let flat = ParamPoint::new(&spec, vec![1.0, 0.0, 0.0]).unwrap();
    let h = garch_volatility(&spec, &x, &flat).unwrap();
    assert!(h.iter().all(|&v| v == 1.0));
    let pp = ParamPoint::new(&spec, vec![1.0, 0.0, 0.5]).unwrap();
    let h = garch_volatility(&spec, &x, &pp).unwrap();
    assert!((h[(0, 79)] - 2.0).abs() < 1e-12);
}

#[test]
fn varma_residual_examples() {
    let spec = ModelSpec::varma(1, 1, 1).unwrap();
    let x = Series::new(1, vec![1.0, 2.0]).unwrap();
    let pp = ParamPoint::new(&spec, vec![0.5, 0.0, 1.0]).unwrap();
    let e = varma_residuals(&spec, &x, &pp).unwrap();
    assert!((e[(0, 1)] - 1.5).abs() < 1e-15);
    let pp = ParamPoint::new(&spec, vec![0.5, 0.5, 1.0]).unwrap();
    let e = varma_residuals(&spec, &x, &pp).unwrap();
    assert!((e[(0, 0)] - 1.0).abs() < 1e-15);
    assert!((e[(0, 1)] - 1.0).abs() < 1e-15);
    let pp = ParamPoint::new(&spec, vec![0.0, 0.0, 1.0]).unwrap();
    let e = varma_residuals(&spec, &x, &pp).unwrap();
    assert_eq!(e.as_slice(), x.as_slice());
}

#[test]
fn constant_mean_model() {
    // intercept-only VARMA(0,0) with unit scale is the constant-mean model
    let spec = ModelSpec::varma(1, 0, 0).unwrap().with_intercept(true);
    let x = Series::new(1, vec![1.0]).unwrap();
    let pp = ParamPoint::new(&spec, vec![0.5, 1.0]).unwrap();
    let ev = eval_at(&spec, &x, 1, &pp, Order::Hessian).unwrap();
    assert!((ev.grad[0] - 0.5).abs() < 1e-15);
    assert!((ev.hess[(0, 0)] + 1.0).abs() < 1e-15);
}

#[test]
fn zero_data_zero_ar_gradient() {
    let spec = ModelSpec::varma(2, 2, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let th = random_theta(&mut rng, &spec);
    let x = Series::new(2, vec![0.0; 40]).unwrap();
    let g = grad_at(&spec, &x, 15, &ParamPoint::new(&spec, th).unwrap()).unwrap();
    assert!(g.iter().take(12).all(|v| *v == 0.0));
}

#[test]
fn horizon_truncation_converges_to_full_recursion() {
    let spec = ModelSpec::varma(2, 1, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let th = random_theta(&mut rng, &spec);
    let x = random_series(&mut rng, 2, 300, 1.0);
    let pp = ParamPoint::new(&spec, th).unwrap();
    let full = eval_at(&spec, &x, 300, &pp, Order::Hessian).unwrap();
    let cut = eval_at(&spec.clone().with_horizon(Some(120)), &x, 300, &pp, Order::Hessian).unwrap();
    assert!((full.loglik - cut.loglik).abs() < 1e-8);
    assert!((&full.grad - &cut.grad).amax() < 1e-6);
    assert!((&full.hess - &cut.hess).amax() < 1e-5);
}

#[test]
fn eval_path_agrees_with_single_observations() {
    let spec = ModelSpec::mgarch(2, 1, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let th = random_theta(&mut rng, &spec);
    let x = random_series(&mut rng, 2, 25, 1.0);
    let pp = ParamPoint::new(&spec, th.clone()).unwrap();
    let mut got = Vec::new();
    eval_path(&spec, &x, &th, Order::Hessian, |t, o| got.push((t, o.clone()))).unwrap();
    assert_eq!(got.len(), 25);
    for (t, o) in got.iter().step_by(6) {
        let ev = eval_at(&spec, &x, *t, &pp, Order::Hessian).unwrap();
        assert!((ev.loglik - o.loglik).abs() < 1e-12);
        assert!(rel_err(ev.grad.as_slice(), &o.grad) < 1e-12);
    }
}

fn simulate_varma(spec: &ModelSpec, th: &[f64], n: usize, seed: u64) -> (Series, DMatrix<f64>) {
    let c = spec.varma_coefficients(th);
    let m = spec.m;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::zeros(m, n);
    let mut eta = DMatrix::zeros(m, n);
    for t in 0..n {
        let eps = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let e = &c.omega * eps;
        let mut v = c.a.clone() + &e;
        for (j, a) in c.ar.iter().enumerate() {
            if t > j {
                v += a * x.column(t - j - 1);
            }
        }
        for (j, b) in c.ma.iter().enumerate() {
            if t > j {
                v += b * eta.column(t - j - 1);
            }
        }
        x.set_column(t, &v);
        eta.set_column(t, &e);
    }
    (Series::from_matrix(&x).unwrap(), eta)
}

fn simulate_garch(spec: &ModelSpec, th: &[f64], n: usize, seed: u64) -> Series {
    let c = spec.garch_coefficients(th);
    let m = spec.m;
    let l = c.corr.clone().cholesky().unwrap().l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let burn = 500;
    let mut x = DMatrix::zeros(m, n + burn);
    let mut h = DMatrix::zeros(m, n + burn);
    for t in 0..n + burn {
        let mut ht = c.c0.clone();
        for (j, a) in c.arch.iter().enumerate() {
            if t > j {
                let xl = x.column(t - j - 1);
                ht += a * xl.component_mul(&xl);
            }
        }
        for (j, b) in c.garch.iter().enumerate() {
            ht += b * if t > j { h.column(t - j - 1).into_owned() } else { c.c0.clone() };
        }
        let eps = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let z = &l * eps;
        let xt = ht.map(f64::sqrt).component_mul(&z);
        h.set_column(t, &ht);
        x.set_column(t, &xt);
    }
    Series::from_matrix(&x.columns(burn, n).into_owned()).unwrap()
}

#[test]
fn residual_inversion_recovers_innovations() {
    let spec = ModelSpec::varma(2, 1, 1).unwrap();
    let th = vec![0.4, 0.1, -0.2, 0.3, 0.5, 0.1, 0.0, 0.4, 1.0, 0.3, 0.8];
    let (x, eta) = simulate_varma(&spec, &th, 600, 21);
    let e = varma_residuals(&spec, &x, &ParamPoint::new(&spec, th).unwrap()).unwrap();
    let worst = (199..600)
        .map(|t| (e.column(t) - eta.column(t)).amax())
        .fold(0.0, f64::max);
    assert!(worst < 1e-8, "max discrepancy {worst}");
}

/// Score mean and information equality checks at the true parameter.
fn score_checks(spec: &ModelSpec, th: &[f64], x: &Series) {
    let d = spec.dim();
    let n = x.len();
    let mut scores = DMatrix::zeros(d, n);
    let mut hsum = DMatrix::zeros(d, d);
    let mut hsq = DMatrix::zeros(d, d);
    eval_path(spec, x, th, Order::Hessian, |t, o| {
        scores.set_column(t - 1, &DVector::from_column_slice(&o.grad));
        let h = DMatrix::from_row_slice(d, d, &o.hess);
        hsq += h.component_mul(&h);
        hsum += h;
    })
    .unwrap();
    let nf = n as f64;
    for i in 0..d {
        let row = scores.row(i);
        let mean = row.mean();
        let sd = row.variance().sqrt();
        assert!(mean.abs() < 4.0 * sd / nf.sqrt(), "score {i}: mean {mean}, sd {sd}");
    }
    for i in 0..d {
        for j in 0..d {
            let prods: Vec<f64> = (0..n).map(|t| scores[(i, t)] * scores[(j, t)]).collect();
            let om = prods.iter().sum::<f64>() / nf;
            let om_var = prods.iter().map(|v| (v - om).powi(2)).sum::<f64>() / nf;
            let sig = hsum[(i, j)] / nf;
            let sig_var = (hsq[(i, j)] / nf - sig * sig).max(0.0);
            let se = ((om_var + sig_var) / nf).sqrt();
            assert!(
                (om + sig).abs() <= 5.0 * se + 1e-12,
                "entry ({i},{j}): outer {om}, hess {sig}, se {se}"
            );
        }
    }
}

#[test]
fn varma_score_and_information_equality() {
    let spec = ModelSpec::varma(2, 1, 1).unwrap();
    let th = vec![0.4, 0.1, -0.2, 0.3, 0.5, 0.1, 0.0, 0.4, 1.0, 0.3, 0.8];
    let (x, _) = simulate_varma(&spec, &th, 2000, 31);
    score_checks(&spec, &th, &x);
}

#[test]
fn garch_score_and_information_equality() {
    let spec = ModelSpec::mgarch(2, 1, 1).unwrap();
    let th = vec![1.0, 1.5, 0.2, 0.02, 0.03, 0.25, 0.5, 0.0, 0.0, 0.4, 0.3];
    let x = simulate_garch(&spec, &th, 2000, 41);
    score_checks(&spec, &th, &x);
}

#[test]
fn mgarch_relabeling_permutes_derivatives() {
    let spec = ModelSpec::mgarch(2, 1, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let th = random_theta(&mut rng, &spec);
    let x = random_series(&mut rng, 2, 30, 1.0);
    let perm = [1, 0];
    let map = spec.layout_permutation(&perm).unwrap();
    let th2: Vec<f64> = map.iter().map(|&k| th[k]).collect();
    let xp = x.permuted(&perm).unwrap();
    let a = eval_at(&spec, &x, 30, &ParamPoint::new(&spec, th).unwrap(), Order::Hessian).unwrap();
    let b = eval_at(&spec, &xp, 30, &ParamPoint::new(&spec, th2).unwrap(), Order::Hessian).unwrap();
    assert!((a.loglik - b.loglik).abs() < 1e-10);
    for (k, &src) in map.iter().enumerate() {
        assert!((b.grad[k] - a.grad[src]).abs() < 1e-8);
        for (l, &src2) in map.iter().enumerate() {
            assert!((b.hess[(k, l)] - a.hess[(src, src2)]).abs() < 1e-8);
        }
    }
}

#[test]
fn invalid_points_rejected() {
    let spec = ModelSpec::mgarch(2, 1, 1).unwrap();
    let mut th = vec![1.0, 1.0, 0.1, 0.0, 0.0, 0.1, 0.5, 0.0, 0.0, 0.5, 0.2];
    assert!(ParamPoint::new(&spec, th.clone()).is_ok());
    th[0] = 0.0;
    assert!(matches!(ParamPoint::new(&spec, th.clone()), Err(Error::InvalidParams(_))));
    th[0] = 1.0;
    th[10] = 1.0;
    assert!(ParamPoint::new(&spec, th).is_err());
    let v = ModelSpec::varma(1, 1, 0).unwrap();
    assert!(ParamPoint::new(&v, vec![0.2, -1.0]).is_err());
}

#[test]
fn stationarity_margin_examples() {
    let v = ModelSpec::varma(1, 2, 0).unwrap();
    // x_t = 0.5 x_{t-1} + 0.3 x_{t-2}: roots of z^2 - 0.5z - 0.3
    let r = stationarity_margin(&v, &[0.5, 0.3, 1.0]);
    let expect = (0.5 + (0.25f64 + 1.2).sqrt()) / 2.0;
    assert!((r - expect).abs() < 1e-12);
    let g = ModelSpec::mgarch(1, 1, 1).unwrap();
    assert!((stationarity_margin(&g, &[1.0, 0.3, 0.5]) - 0.8).abs() < 1e-12);
}

#[test]
fn final_equations_layout() {
    let spec = ModelSpec::final_equations(2, 2, 1).unwrap();
    assert_eq!(spec.dim(), 9);
    let names: Vec<String> = spec.groups().into_iter().map(|g| g.name).collect();
    assert_eq!(names, ["a1", "a2", "B1", "Omega"]);
    let th = [0.3, -0.1, 0.1, 0.2, 0.3, 0.4, 1.0, 0.1, 1.2];
    let c = spec.varma_coefficients(&th);
    assert_eq!(c.ar[1][(0, 0)], -0.1);
    assert_eq!(c.ar[1][(0, 1)], 0.0);
    assert_eq!(c.ma[0][(0, 1)], 0.3);
    assert_eq!(c.omega[(1, 0)], 0.1);
}

#[test]
fn gradcheck_batch_passes_and_zero_coefficients_are_exact() {
    let g = gradcheck(&ModelSpec::mgarch(2, 1, 1).unwrap(), 5, 3, true, false).unwrap();
    assert!(g.grad_err < 1e-5 && g.hess_err < 1e-4, "{g:?}");
    let z = gradcheck(&ModelSpec::varma(2, 1, 1).unwrap(), 5, 4, false, true).unwrap();
    assert!(z.grad_err < 1e-10 && z.hess_err < 1e-10, "{z:?}");
}
