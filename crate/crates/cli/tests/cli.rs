mod common;

use std::fs;
use std::path::{Path, PathBuf};

use common::*;
use tempfile::TempDir;

/// Data rows of a CSV (comments and header skipped), parsed as numbers.
fn rows(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(|f| f.parse().unwrap_or(f64::NAN)).collect())
        .collect()
}

fn q_hat(path: &Path) -> f64 {
    let text = fs::read_to_string(path).unwrap();
    let head = text.lines().next().unwrap();
    let v = head.split_whitespace().find_map(|w| w.strip_prefix("q_hat=")).unwrap();
    v.parse().unwrap()
}

/// A short DGP 1 path shared by the fitting tests.
fn dgp1_path(dir: &TempDir) -> PathBuf {
    let x = p(dir, "x.csv");
    ok(&["simulate", "--T", "300", "--seed", "3", "--output", s(&x)]);
    x
}

#[test]
fn simulate_writes_header_and_rows() {
    let dir = TempDir::new().unwrap();
    let a = p(&dir, "a.csv");
    ok(&["simulate", "--T", "50", "--seed", "1", "--output", s(&a)]);
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 51);
    assert_eq!(text.lines().next(), Some("t,x1,x2"));
    assert!(text.lines().skip(1).all(|l| l.split(',').count() == 3));
    let b = p(&dir, "b.csv");
    ok(&["simulate", "--T", "50", "--seed", "1", "--output", s(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn usage_and_io_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    assert_eq!(run(&["simulate", "--T", "5", "--output", s(&p(&dir, "a.csv"))]).status.code(), Some(2));
    assert_eq!(run(&["fit", "--h", "0.3", "--input", "/no/such/file", "--output", "x"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        run(&["simulate", "--output", "/no/such/dir/a.csv"]).status.code(),
        Some(2),
        "unwritable output"
    );
}

#[test]
fn fit_round_trip_and_layout() {
    let dir = TempDir::new().unwrap();
    let x = dgp1_path(&dir);
    let (c, v) = (p(&dir, "c.csv"), p(&dir, "v.csv"));
    ok(&with_model(
        "fit",
        &["--h", "0.3", "--grid", "5", "--input", s(&x), "--output", s(&c), "--cov-output", s(&v)],
    ));
    let text = fs::read_to_string(&c).unwrap();
    let header = text.lines().nth(1).unwrap();
    let want: Vec<String> = std::iter::once("tau".to_string())
        .chain((1..=9).map(|i| format!("theta_{i}")))
        .chain((1..=9).map(|i| format!("thetatilde_{i}")))
        .chain(std::iter::once("converged".to_string()))
        .collect();
    assert_eq!(header, want.join(","));
    assert_eq!(rows(&c).len(), 5);
    let cov = rows(&v);
    assert_eq!(cov.len(), 5);
    assert!(cov.iter().all(|r| r.len() == 1 + 81));
}

#[test]
fn malformed_input_names_the_line() {
    let dir = TempDir::new().unwrap();
    let x = dgp1_path(&dir);
    let mut text: Vec<String> = fs::read_to_string(&x).unwrap().lines().map(String::from).collect();
    text[7] = "7,0.5,oops".into();
    let bad = p(&dir, "bad.csv");
    fs::write(&bad, text.join("\n")).unwrap();
    let out = run(&with_model("fit", &["--h", "0.3", "--input", s(&bad), "--output", s(&p(&dir, "c.csv"))]));
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 8"), "{err}");
    // wrong dimension
    let out = run(&["fit", "--m", "3", "--h", "0.3", "--input", s(&x), "--output", s(&p(&dir, "c.csv"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn band_rows_nest_and_match_covariance() {
    let dir = TempDir::new().unwrap();
    let x = dgp1_path(&dir);
    let common = ["--h", "0.3", "--grid", "5", "--R", "300", "--seed", "9", "--input", s(&x)];
    let (b05, b10) = (p(&dir, "b05.csv"), p(&dir, "b10.csv"));
    let mut a = with_model("band", &common);
    a.extend_from_slice(&["--alpha", "0.05", "--select", "1,3", "--output", s(&b05)]);
    ok(&a);
    let mut a = with_model("band", &common);
    a.extend_from_slice(&["--alpha", "0.10", "--select", "1,3", "--output", s(&b10)]);
    ok(&a);
    let (r05, r10) = (rows(&b05), rows(&b10));
    assert_eq!(r05.len(), 5);
    for (r, s) in r05.iter().zip(&r10) {
        for k in 0..2 {
            let (c, lo, hi) = (r[1 + 3 * k], r[2 + 3 * k], r[3 + 3 * k]);
            assert!(lo <= c && c <= hi);
            assert!(lo <= s[2 + 3 * k] && s[3 + 3 * k] <= hi);
        }
    }

    // k = 1: width = 2 q_hat sqrt(Sigma_ii)
    let b1 = p(&dir, "b1.csv");
    let mut a = with_model("band", &common);
    a.extend_from_slice(&["--select", "2", "--output", s(&b1)]);
    ok(&a);
    let v = p(&dir, "v.csv");
    ok(&with_model(
        "fit",
        &["--h", "0.3", "--grid", "5", "--input", s(&x), "--output", s(&p(&dir, "c.csv")), "--cov-output", s(&v)],
    ));
    let q = q_hat(&b1);
    for (band, cov) in rows(&b1).iter().zip(rows(&v)) {
        let want = 2.0 * q * cov[1 + 9 + 1].sqrt();
        assert!((band[3] - band[2] - want).abs() < 1e-10 * want.max(1.0), "{} vs {want}", band[3] - band[2]);
    }
}

#[test]
fn cv_reports_a_single_choice() {
    let dir = TempDir::new().unwrap();
    let x = p(&dir, "ar.csv");
    ok(&["simulate", "--T", "200", "--seed", "2", "--output", s(&x)]);
    let out = ok(&["cv", "--p", "1", "--candidates", "0.2", "--stride", "10", "--input", s(&x)]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("h_hat=")).count(), 1);
    assert!(text.contains("h_hat=0.2\n"));
    assert!(text.contains("h_tilde=0.4\n"));

    let out = ok(&["cv", "--p", "1", "--candidates", "0.12,0.2", "--stride", "10", "--input", s(&x)]);
    let text = String::from_utf8(out.stdout).unwrap();
    let get = |k: &str| -> f64 {
        text.lines().find_map(|l| l.strip_prefix(k)).unwrap().parse().unwrap()
    };
    assert_eq!(get("h_tilde="), 2.0 * get("h_hat="));
}

#[test]
fn coverage_table_shape() {
    let dir = TempDir::new().unwrap();
    let o = p(&dir, "cov.csv");
    ok(&[
        "coverage", "--T", "300", "--h", "0.4", "--reps", "50", "--R", "100", "--grid-step", "0.05", "--seed", "4",
        "--output", s(&o),
    ]);
    let text = fs::read_to_string(&o).unwrap();
    assert!(text.lines().next().unwrap().contains("reps=50"));
    let header = text.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(header, "T,h,a1_90,a1_95,a2_90,a2_95,B1_90,B1_95,Omega_90,Omega_95");
    let r = rows(&o);
    assert_eq!(r.len(), 1);
    assert!(r[0][2..].iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn gradcheck_thresholds() {
    let out = ok(&["gradcheck", "--q", "1", "--zero-coef"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for key in ["grad_max_rel_err=", "hess_max_rel_err="] {
        let v: f64 = text.lines().find_map(|l| l.strip_prefix(key)).unwrap().parse().unwrap();
        assert!(v < 1e-10, "{key}{v}");
    }
    ok(&["gradcheck", "--model", "mgarch", "--q", "1", "--vary"]);
    assert_eq!(run(&["gradcheck", "--grad-tol", "1e-30"]).status.code(), Some(1));
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let dir = TempDir::new().unwrap();
    assert!(common::reproducible(&dir));
}
