//! Helpers shared by the CLI test targets.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

pub const BIN: &str = env!("CARGO_BIN_EXE_tvqmle");

pub fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

pub fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

pub fn p(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

pub fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

pub const DGP1_MODEL: [&str; 7] = ["--final-equations", "--p", "2", "--q", "1", "--horizon", "50"];

pub fn with_model<'a>(cmd: &'a str, rest: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd];
    v.extend_from_slice(&DGP1_MODEL);
    v.extend_from_slice(rest);
    v
}

/// Output bytes of every command run with `--workers workers`.
fn outputs_for(workers: &str, dir: &TempDir) -> Vec<Vec<u8>> {
    let f = |n: &str| p(dir, &format!("{workers}_{n}"));
    let x = f("x.csv");
    ok(&["--workers", workers, "simulate", "--T", "300", "--seed", "5", "--output", s(&x)]);
    let (c, v, b, cv, cov) = (f("c.csv"), f("v.csv"), f("b.csv"), f("cv.csv"), f("cov.csv"));
    let mut a = vec!["--workers", workers];
    a.extend(with_model("fit", &["--h", "0.3", "--grid", "5", "--input", s(&x), "--output", s(&c), "--cov-output", s(&v)]));
    ok(&a);
    let mut a = vec!["--workers", workers];
    a.extend(with_model("band", &["--h", "0.3", "--grid", "5", "--R", "200", "--select", "1,2", "--input", s(&x), "--output", s(&b)]));
    ok(&a);
    let cv_out = ok(&[
        "--workers", workers, "cv", "--p", "1", "--candidates", "0.15,0.2", "--stride", "15", "--input", s(&x), "--output",
        s(&cv),
    ]);
    ok(&[
        "--workers", workers, "coverage", "--T", "300", "--reps", "50", "--R", "100", "--grid-step", "0.05", "--output",
        s(&cov),
    ]);
    let grad = ok(&["--workers", workers, "gradcheck", "--vary"]);
    let mut all: Vec<Vec<u8>> = [x, c, v, b, cv, cov].iter().map(|p| fs::read(p).unwrap()).collect();
    all.push(cv_out.stdout);
    all.push(grad.stdout);
    all
}

/// Every command gives byte-identical output across repeated runs and
/// across `--workers 1` and `--workers 8`.
pub fn reproducible(dir: &TempDir) -> bool {
    let one = outputs_for("1", dir);
    let eight = outputs_for("8", dir);
    let again = outputs_for("1", dir);
    one == eight && one == again
}
