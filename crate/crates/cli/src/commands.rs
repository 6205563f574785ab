use std::fmt::Write as _;

use tvqmle::bandwidth::{default_candidates, select_bandwidth};
use tvqmle::inference::{multiplier_sups, Band, BandFit, SelectionMatrix};
use tvqmle::kernels::Bandwidth;
use tvqmle::models::check::gradcheck;
use tvqmle::models::ModelSpec;
use tvqmle::simulate::{coverage_study, simulate_dgp, CoverageConfig, DgpSpec};

use crate::io::{emit, fmt17, read_series, series_csv, write_file};
use crate::{
    BandArgs, CliError, Command, CoverageArgs, CvArgs, DgpKind, FitArgs, GradcheckArgs, ModelArgs, ModelKind,
    SimulateArgs,
};

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Band(a) => band(a),
        Command::Cv(a) => cv(a),
        Command::Coverage(a) => coverage(a),
        Command::Gradcheck(a) => grad_check(a),
    }
}

fn model_spec(a: &ModelArgs) -> Result<ModelSpec> {
    let spec = match a.model {
        ModelKind::Varma if a.final_equations => {
            if a.intercept {
                return Err(CliError::Usage("--intercept is not available with --final-equations".into()));
            }
            ModelSpec::final_equations(a.m, a.p, a.q)?
        }
        ModelKind::Varma => ModelSpec::varma(a.m, a.p, a.q)?.with_intercept(a.intercept),
        ModelKind::Mgarch => {
            if a.final_equations || a.intercept {
                return Err(CliError::Usage("--final-equations and --intercept apply to VARMA only".into()));
            }
            ModelSpec::mgarch(a.m, a.p, a.q)?
        }
    };
    Ok(spec.with_horizon(a.horizon))
}

fn dgp(kind: DgpKind) -> DgpSpec {
    match kind {
        DgpKind::Dgp1 => DgpSpec::dgp1(),
        DgpKind::Dgp2 => DgpSpec::dgp2(),
    }
}

/// `g` equally spaced points on `[h, 1 - h]`.
fn band_grid(h: f64, g: usize) -> Result<Vec<f64>> {
    if g == 0 {
        return Err(CliError::Usage("--grid must be at least 1".into()));
    }
    if g == 1 {
        return Ok(vec![0.5]);
    }
    let step = (1.0 - 2.0 * h) / (g - 1) as f64;
    Ok((0..g).map(|i| if i + 1 == g { 1.0 - h } else { h + step * i as f64 }).collect())
}

fn bandwidth(h: f64) -> Result<Bandwidth> {
    if h >= 0.5 {
        return Err(CliError::Usage(format!("--h must be below 0.5, got {h}")));
    }
    Ok(Bandwidth::new(h)?)
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let mut d = dgp(a.dgp);
    if let Some(b) = a.burn_in {
        d = d.with_burn_in(b);
    }
    let x = simulate_dgp(&d, a.n, a.seed)?;
    write_file(&a.output, &series_csv(&x))
}

fn fit(a: &FitArgs) -> Result<()> {
    let spec = model_spec(&a.model)?;
    let h = bandwidth(a.h)?;
    let x = read_series(&a.input, spec.m)?;
    let grid = band_grid(a.h, a.grid)?;
    let bf = BandFit::new(&spec, &x, &grid, h)?;
    let d = spec.dim();

    let mut out = String::new();
    let _ = writeln!(out, "# T={} h={} params={}", x.len(), a.h, spec.param_names().join(" "));
    out.push_str("tau");
    (1..=d).for_each(|i| {
        let _ = write!(out, ",theta_{i}");
    });
    (1..=d).for_each(|i| {
        let _ = write!(out, ",thetatilde_{i}");
    });
    out.push_str(",converged\n");
    for (i, f) in bf.curve.fits.iter().enumerate() {
        out.push_str(&fmt17(f.tau));
        for v in f.params.eta1.iter() {
            let _ = write!(out, ",{}", fmt17(*v));
        }
        match &bf.curve.bias_corrected[i] {
            Some(tt) => tt.iter().for_each(|v| {
                let _ = write!(out, ",{}", fmt17(*v));
            }),
            None => (0..d).for_each(|_| out.push_str(",nan")),
        }
        let _ = writeln!(out, ",{}", bf.curve.bias_corrected[i].is_some());
    }
    write_file(&a.output, &out)?;

    if let Some(path) = &a.cov_output {
        let mut cov = String::from("tau");
        for r in 1..=d {
            for c in 1..=d {
                let _ = write!(cov, ",s_{r}_{c}");
            }
        }
        cov.push('\n');
        for (f, c) in bf.curve.fits.iter().zip(&bf.covs) {
            cov.push_str(&fmt17(f.tau));
            for r in 0..d {
                for k in 0..d {
                    let _ = write!(cov, ",{}", fmt17(c.sigma_theta[(r, k)]));
                }
            }
            cov.push('\n');
        }
        write_file(path, &cov)?;
    }
    let failed = bf.curve.failures();
    if !failed.is_empty() {
        return Err(CliError::Numerical(format!("local fits did not converge at tau = {failed:?}")));
    }
    Ok(())
}

fn band(a: &BandArgs) -> Result<()> {
    let spec = model_spec(&a.model)?;
    let h = bandwidth(a.h)?;
    let d = spec.dim();
    if a.select.iter().any(|&i| i == 0 || i > d) {
        return Err(CliError::Usage(format!("--select indices must lie in 1..={d}")));
    }
    let idx: Vec<usize> = a.select.iter().map(|i| i - 1).collect();
    let c = SelectionMatrix::coordinates(d, &idx)?;
    let x = read_series(&a.input, spec.m)?;
    let bf = BandFit::new(&spec, &x, &band_grid(a.h, a.grid)?, h)?;
    let sups = multiplier_sups(&bf.weights()?, c.rank(), a.r, a.seed)?;
    let b = Band::from_sups(&bf, &c, a.alpha, &sups)?;

    let mut out = String::new();
    let _ = writeln!(
        out,
        "# q_hat={} R={} seed={} h={} alpha={} T={}",
        fmt17(b.q_hat),
        b.replications,
        a.seed,
        a.h,
        a.alpha,
        x.len()
    );
    out.push_str("tau");
    for i in &a.select {
        let _ = write!(out, ",center_{i},lower_{i},upper_{i}");
    }
    out.push('\n');
    for j in 0..b.grid.len() {
        out.push_str(&fmt17(b.grid[j]));
        let (lo, hi) = (b.lower(j), b.upper(j));
        for i in 0..idx.len() {
            let _ = write!(out, ",{},{},{}", fmt17(b.center[j][i]), fmt17(lo[i]), fmt17(hi[i]));
        }
        out.push('\n');
    }
    write_file(&a.output, &out)
}

fn cv(a: &CvArgs) -> Result<()> {
    let spec = model_spec(&a.model)?;
    let x = read_series(&a.input, spec.m)?;
    let candidates = a.candidates.clone().unwrap_or_else(default_candidates);
    let r = select_bandwidth(&spec, &x, &candidates, a.stride)?;
    let mut csv = String::from("h,score\n");
    for (h, s) in r.candidates.iter().zip(&r.scores) {
        let _ = writeln!(csv, "{},{}", fmt17(*h), fmt17(*s));
    }
    for h in &r.failed {
        let _ = writeln!(csv, "{},nan", fmt17(*h));
    }
    emit(a.output.as_ref(), &csv)?;
    println!("h_hat={}", r.h_hat);
    println!("h_tilde={}", r.h_tilde);
    Ok(())
}

fn coverage(a: &CoverageArgs) -> Result<()> {
    let d = dgp(a.dgp);
    let (h_default, horizon_default) = match a.dgp {
        DgpKind::Dgp1 => (0.4, 50),
        DgpKind::Dgp2 => (0.45, 30),
    };
    let mut config = CoverageConfig::new(
        a.n,
        a.h.clone().unwrap_or_else(|| vec![h_default]),
        a.reps,
        a.r,
        a.seed,
    );
    config.alphas = a.alpha.clone();
    config.grid_step = a.grid_step;
    config.horizon = Some(a.horizon.unwrap_or(horizon_default));
    let rep = coverage_study(&d, &config)?;
    eprintln!("wall clock {:.1} s", rep.wall_clock.as_secs_f64());

    let groups: Vec<String> = d.model.groups().into_iter().map(|g| g.name).collect();
    let level = |alpha: f64| format!("{}", ((1.0 - alpha) * 100.0).round());
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# dgp={} reps={} R={} seed={} grid_step={} horizon={}",
        rep.dgp,
        rep.reps,
        rep.r,
        a.seed,
        a.grid_step,
        config.horizon.unwrap_or(0)
    );
    let _ = writeln!(out, "# dropped={} used={}", rep.dropped, rep.used());
    out.push_str("T,h");
    for g in &groups {
        for &al in &rep.alphas {
            let _ = write!(out, ",{g}_{}", level(al));
        }
    }
    out.push('\n');
    for &h in &rep.h_list {
        let _ = write!(out, "{},{}", rep.n, h);
        for g in &groups {
            for &al in &rep.alphas {
                let v = rep.get(g, h, al).unwrap_or(f64::NAN);
                let _ = write!(out, ",{v:.4}");
            }
        }
        out.push('\n');
    }
    emit(a.output.as_ref(), &out)?;
    if !rep.is_valid() {
        return Err(CliError::Numerical(format!(
            "{} of {} replications dropped (more than 5%)",
            rep.dropped, rep.reps
        )));
    }
    Ok(())
}

fn grad_check(a: &GradcheckArgs) -> Result<()> {
    let spec = model_spec(&a.model)?;
    let g = gradcheck(&spec, a.configs, a.seed, a.vary, a.zero_coef)?;
    println!("configs={}", g.configs);
    println!("grad_max_rel_err={:e}", g.grad_err);
    println!("hess_max_rel_err={:e}", g.hess_err);
    if g.grad_err < a.grad_tol && g.hess_err < a.hess_tol {
        println!("PASS");
        Ok(())
    } else {
        println!("FAIL");
        Err(CliError::Numerical(format!(
            "derivative errors above tolerance ({:e}, {:e})",
            a.grad_tol, a.hess_tol
        )))
    }
}
