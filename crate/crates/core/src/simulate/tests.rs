use super::*;

#[test]
fn dgp_curves_at_midpoint() {
    let t1 = DgpSpec::dgp1().theta(0.5);
    let e = (-0.5f64).exp();
    let expect1 = [0.6 * e, -0.3 * e, 0.5, 0.0, 0.0, 0.8, 1.7, 0.2, 1.5];
    for (a, b) in t1.iter().zip(expect1) {
        assert!((a - b).abs() < 1e-12);
    }
    let t2 = DgpSpec::dgp2().theta(0.0);
    let expect2 = [2.0 * (-0.5f64).exp(), 3.2, 0.45, 0.0125, 0.0125, 0.4, 0.3, 0.0, 0.0, 0.3, 0.0];
    for (a, b) in t2.iter().zip(expect2) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn dgp_curves_are_valid_and_stable() {
    for dgp in [DgpSpec::dgp1(), DgpSpec::dgp2()] {
        for i in 0..=100 {
            let th = dgp.theta(i as f64 / 100.0);
            crate::models::ParamPoint::new(&dgp.model, th.as_slice().to_vec()).unwrap();
            assert!(crate::models::stationarity_margin(&dgp.model, th.as_slice()) > 0.0);
        }
    }
}

#[test]
fn same_seed_same_path() {
    let dgp = DgpSpec::dgp1();
    let a = simulate_dgp(&dgp, 300, 7).unwrap();
    let b = simulate_dgp(&dgp, 300, 7).unwrap();
    let c = simulate_dgp(&dgp, 300, 8).unwrap();
    assert_eq!(a.as_slice(), b.as_slice());
    assert_ne!(a.as_slice(), c.as_slice());
}

#[test]
fn short_sample_is_rejected() {
    assert!(matches!(simulate_dgp(&DgpSpec::dgp1(), 49, 1), Err(Error::Precondition(_))));
}

#[test]
fn var1_recursion_by_hand() {
    // x_t = 0.5 x_{t-1} + eps_t with unit innovations, no burn-in
    let model = ModelSpec::varma(1, 1, 0).unwrap();
    let dgp = DgpSpec::new("ar1", model, Arc::new(|_| DVector::from_vec(vec![0.5, 1.0]))).with_burn_in(0);
    let x = simulate_dgp(&dgp, 60, 3).unwrap();
    let eps = innovations(1, 60, 3);
    let mut prev = 0.0;
    for t in 1..=60 {
        let want = 0.5 * prev + eps[t - 1];
        assert!((x.obs(t)[0] - want).abs() < 1e-12);
        prev = want;
    }
}

#[test]
fn garch_path_is_positive_volatility() {
    let x = simulate_dgp(&DgpSpec::dgp2(), 500, 4).unwrap();
    assert!(x.as_slice().iter().all(|v| v.is_finite()));
    // the sample variance is of the order of c0 / (1 - C - D)
    let var0 = x.as_slice().iter().step_by(2).map(|v| v * v).sum::<f64>() / 500.0;
    assert!(var0 > 0.5 && var0 < 50.0, "{var0}");
}

#[test]
fn explosive_path_is_reported() {
    let model = ModelSpec::varma(1, 1, 0).unwrap();
    let dgp = DgpSpec::new("boom", model, Arc::new(|_| DVector::from_vec(vec![1.5, 1.0]))).with_burn_in(0);
    assert!(matches!(simulate_dgp(&dgp, 200, 1), Err(Error::ExplosivePath { .. })));
}

#[test]
fn frozen_process_matches_stationary_approx() {
    let dgp = DgpSpec::dgp1();
    let a = stationary_approx(&dgp, 0.3, 200, 5).unwrap();
    let b = simulate_dgp(&dgp.frozen(0.3), 200, 5).unwrap();
    assert_eq!(a.as_slice(), b.as_slice());
}

#[test]
fn coupled_gap_is_zero_for_constant_process() {
    let dgp = DgpSpec::dgp1().frozen(0.4);
    let gap = coupled_gap(&dgp, 100, 6).unwrap();
    assert!(gap.iter().all(|g| *g == 0.0));
}

#[test]
fn coupled_gap_shrinks_with_sample_size() {
    let dgp = DgpSpec::dgp1();
    let mean = |n: usize| {
        let seeds = 0..5u64;
        seeds.map(|s| coupled_gap(&dgp, n, s).unwrap().iter().sum::<f64>() / n as f64).sum::<f64>()
    };
    assert!(mean(400) < mean(100));
}

#[test]
fn seeds_and_streams_are_distinct() {
    use rand::Rng;
    let a: u64 = rng_for(1, 0).random();
    let b: u64 = rng_for(1, 1).random();
    assert_ne!(a, b);
    assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
    assert_eq!(derive_seed(9, 4), derive_seed(9, 4));
}

fn ar1_tv() -> DgpSpec {
    let model = ModelSpec::varma(1, 1, 0).unwrap();
    DgpSpec::new("ar1", model, Arc::new(|tau: f64| DVector::from_vec(vec![0.2 + 0.4 * tau, 1.0])))
}

fn small_config(alphas: Vec<f64>) -> CoverageConfig {
    let mut c = CoverageConfig::new(300, vec![0.3], 50, 100, 21);
    c.alphas = alphas;
    c.grid_step = 0.05;
    c
}

#[test]
fn interior_grid_endpoints() {
    let g = interior_grid(0.4, 0.01);
    assert_eq!(g.len(), 21);
    assert!((g[20] - 0.6).abs() < 1e-12);
    let g = interior_grid(0.3, 0.15);
    assert_eq!(g.len(), 4);
    assert!((g[3] - 0.7).abs() < 1e-12);
}

#[test]
fn coverage_levels_are_ordered_and_degenerate_level_misses() {
    let rep = coverage_study(&ar1_tv(), &small_config(vec![1.0, 0.10, 0.05])).unwrap();
    assert!(rep.is_valid());
    assert_eq!(rep.cells.len(), 2 * 3);
    for g in ["A1", "Omega"] {
        assert_eq!(rep.get(g, 0.3, 1.0), Some(0.0));
        let (c90, c95) = (rep.get(g, 0.3, 0.10).unwrap(), rep.get(g, 0.3, 0.05).unwrap());
        assert!(c95 >= c90, "{g}: {c95} < {c90}");
        assert!(c90 > 0.5, "{g}: {c90}");
    }
}

#[test]
fn coverage_is_deterministic() {
    let a = coverage_study(&ar1_tv(), &small_config(vec![0.1])).unwrap();
    let b = coverage_study(&ar1_tv(), &small_config(vec![0.1])).unwrap();
    assert_eq!(a.cells, b.cells);
    assert_eq!(a.dropped, b.dropped);
}

#[test]
fn coverage_rejects_too_few_replications() {
    let mut c = small_config(vec![0.1]);
    c.reps = 10;
    assert!(matches!(coverage_study(&ar1_tv(), &c), Err(Error::Precondition(_))));
    c.reps = 50;
    c.h_list = vec![0.5];
    assert!(coverage_study(&ar1_tv(), &c).is_err());
}
