use std::sync::Arc;

use nalgebra::DVector;

use super::*;
use crate::estimate::{fit_local, LocalParams};
use crate::simulate::{simulate_dgp, DgpSpec};

fn ar1(slope: f64, n: usize, seed: u64) -> (ModelSpec, Series) {
    let spec = ModelSpec::varma(1, 1, 0).unwrap();
    let dgp = DgpSpec::new(
        "ar1",
        spec.clone(),
        Arc::new(move |tau: f64| DVector::from_vec(vec![0.1 + slope * tau, 1.0])),
    );
    (spec, simulate_dgp(&dgp, n, seed).unwrap())
}

#[test]
fn default_grid_respects_doubling() {
    let g = default_candidates();
    assert!(!g.is_empty() && g.len() < 8);
    assert!((g[0] - 0.1).abs() < 1e-15);
    assert!(g.iter().all(|h| 2.0 * h < 0.5));
    assert!(g.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn held_out_indices() {
    assert_eq!(held_out(10, 1), (1..=10).collect::<Vec<_>>());
    assert_eq!(held_out(10, 4), vec![2, 6, 10]);
    assert_eq!(held_out(10, 10), vec![5]);
}

#[test]
fn single_index_score_is_its_held_out_contribution() {
    let (spec, x) = ar1(0.5, 200, 1);
    let h = Bandwidth::new(0.2).unwrap();
    let s = cv_score(&spec, &x, h, 200).unwrap();
    assert_eq!((s.used, s.dropped), (1, 0));
    // refit by hand with observation 100 dropped
    let t = 100;
    let start = fit_local(&spec, &x, x.tau(t), h, &LocalParams::constant(DVector::from_vec(vec![0.3, 1.0]))).unwrap();
    let (loo, _) = fit_local_warm(&spec, &x, x.tau(t), h, &start.params, None, Some(t)).unwrap();
    let theta = ParamPoint::new(&spec, loo.params.eta1.as_slice().to_vec()).unwrap();
    let want = loglik_at(&spec, &x, t, &theta).unwrap();
    assert!((s.value - want).abs() < 1e-6, "{} vs {want}", s.value);
}

#[test]
fn leaving_out_changes_the_fit() {
    let (spec, x) = ar1(0.5, 200, 2);
    let h = Bandwidth::new(0.2).unwrap();
    let init = LocalParams::constant(DVector::from_vec(vec![0.3, 1.0]));
    let (a, _) = fit_local_warm(&spec, &x, 0.5, h, &init, None, None).unwrap();
    let (b, _) = fit_local_warm(&spec, &x, 0.5, h, &init, None, Some(100)).unwrap();
    assert!((a.params.eta1.clone() - b.params.eta1.clone()).amax() > 0.0);
}

#[test]
fn tiny_bandwidth_is_rejected() {
    let (spec, x) = ar1(0.0, 100, 3);
    assert!(matches!(cv_score(&spec, &x, Bandwidth::new(0.01).unwrap(), 1), Err(Error::Precondition(_))));
    assert!(matches!(select_bandwidth(&spec, &x, &[0.01, 0.2], 1), Err(Error::Precondition(_))));
    assert!(matches!(select_bandwidth(&spec, &x, &[], 1), Err(Error::Precondition(_))));
    assert!(matches!(select_bandwidth(&spec, &x, &[0.3], 1), Err(Error::Precondition(_))));
}

#[test]
fn ties_go_to_the_larger_bandwidth() {
    assert_eq!(argmax_last(&[1.0, 2.0, 2.0]), Some(2));
    assert_eq!(argmax_last(&[3.0, 2.0, 2.0]), Some(0));
    assert_eq!(argmax_last(&[]), None);
}

#[test]
fn single_candidate_and_doubling() {
    let (spec, x) = ar1(0.4, 300, 4);
    let r = select_bandwidth(&spec, &x, &[0.2], 10).unwrap();
    assert_eq!(r.h_hat, 0.2);
    assert_eq!(r.h_tilde, 0.4);
    assert_eq!(r.candidates, vec![0.2]);
}

#[test]
fn candidate_order_does_not_matter() {
    let (spec, x) = ar1(0.4, 300, 5);
    let a = select_bandwidth(&spec, &x, &[0.1, 0.2, 0.15], 10).unwrap();
    let b = select_bandwidth(&spec, &x, &[0.2, 0.15, 0.1, 0.2], 10).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.h_tilde, 2.0 * a.h_hat);
}

#[test]
fn constant_process_prefers_wide_windows() {
    // with no time variation the bias is zero and the widest window wins
    let mut wins = 0;
    for seed in 0..5 {
        let (spec, x) = ar1(0.0, 400, 10 + seed);
        let r = select_bandwidth(&spec, &x, &[0.03, 0.24], 4).unwrap();
        wins += usize::from(r.h_hat == 0.24);
    }
    assert!(wins >= 4, "{wins}");
}
