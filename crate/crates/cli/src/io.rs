use std::fs;
use std::path::{Path, PathBuf};

use tvqmle::models::Series;

use crate::CliError;

/// 17 significant digits, round-trip exact.
pub fn fmt17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "nan".into()
    }
}

pub fn write_file(path: &Path, body: &str) -> Result<(), CliError> {
    fs::write(path, body).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

/// Writes to `path`, or to standard output when absent.
pub fn emit(path: Option<&PathBuf>, body: &str) -> Result<(), CliError> {
    match path {
        Some(p) => write_file(p, body),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

/// Reads a series CSV: an optional header, `#` comments, and rows
/// `[t,] x1, ..., xm`. A leading `t` column is recognised from the header.
pub fn read_series(path: &Path, m: usize) -> Result<Series, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut skip_first_col = false;
    let mut first = true;
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if first {
            first = false;
            if rec.iter().any(|f| f.parse::<f64>().is_err()) {
                skip_first_col = rec.get(0).is_some_and(|f| f.eq_ignore_ascii_case("t"));
                continue;
            }
        }
        let fields: Vec<&str> = rec.iter().skip(usize::from(skip_first_col)).collect();
        if fields.len() != m {
            return Err(CliError::Dimension(format!(
                "{}: line {line} has {} columns, model expects m = {m}",
                path.display(),
                fields.len()
            )));
        }
        let row = fields
            .iter()
            .map(|f| {
                f.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| CliError::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: format!("not a finite number: {f:?}"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Parse { path: path.to_path_buf(), line: 0, msg: "no observations".into() });
    }
    Ok(Series::from_rows(&rows)?)
}

pub fn series_csv(x: &Series) -> String {
    let m = x.dim();
    let mut out = String::from("t");
    for i in 1..=m {
        out.push_str(&format!(",x{i}"));
    }
    out.push('\n');
    for t in 1..=x.len() {
        out.push_str(&t.to_string());
        for v in x.obs(t) {
            out.push(',');
            out.push_str(&fmt17(*v));
        }
        out.push('\n');
    }
    out
}
