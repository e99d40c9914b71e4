//! Atomic file output and the CSV formats for series, state labels and traces.

use std::fs;
use std::io::Write;
use std::path::Path;

use salt_core::{FitTrace, TimeSeries};

use crate::error::{CliError, CliResult};

/// Write `bytes` to a temporary file next to `path`, then rename it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let fail = |e: std::io::Error| CliError::io(format!("cannot write {}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(bytes).map_err(fail)?;
    tmp.as_file().sync_all().map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

pub fn read_file(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))
}

/// Shortest decimal string that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn parse_f64(s: &str, what: impl Fn() -> String) -> CliResult<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| CliError::data(format!("{}: `{s}` is not a number", what())))?;
    if !v.is_finite() {
        return Err(CliError::data(format!("{}: value `{s}` is not finite", what())));
    }
    Ok(v)
}

fn csv_bytes(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::io(format!("csv encoding failed: {e}"));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::io(format!("csv encoding failed: {e}")))
}

fn read_csv(path: &Path) -> CliResult<(Vec<String>, Vec<csv::StringRecord>)> {
    let bytes = read_file(path)?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes.as_slice());
    let ctx = |e: csv::Error| CliError::data(format!("{}: {e}", path.display()));
    let header: Vec<String> = r.headers().map_err(ctx)?.iter().map(|s| s.trim().to_string()).collect();
    let rows = r.records().collect::<Result<Vec<_>, _>>().map_err(ctx)?;
    Ok((header, rows))
}

/// Header `t,y0,...,y{N-1}` and one row per step.
pub fn series_csv(y: &TimeSeries) -> CliResult<Vec<u8>> {
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((0..y.dim()).map(|i| format!("y{i}")))
        .collect();
    csv_bytes(
        &header,
        (0..y.len()).map(|t| std::iter::once(t.to_string()).chain(y.row(t).iter().map(|&v| fmt_f64(v))).collect()),
    )
}

pub fn write_series(path: &Path, y: &TimeSeries) -> CliResult<()> {
    atomic_write(path, &series_csv(y)?)
}

fn check_step(path: &Path, row: usize, field: &str) -> CliResult<()> {
    let t: usize = field
        .trim()
        .parse()
        .map_err(|_| CliError::data(format!("{} row {}: bad step index `{field}`", path.display(), row + 1)))?;
    if t != row {
        return Err(CliError::data(format!(
            "{} row {}: expected step {row}, found {t}",
            path.display(),
            row + 1
        )));
    }
    Ok(())
}

pub fn read_series(path: &Path) -> CliResult<TimeSeries> {
    let (header, rows) = read_csv(path)?;
    let n = header.len().saturating_sub(1);
    let expected: Vec<String> = std::iter::once("t".to_string()).chain((0..n).map(|i| format!("y{i}"))).collect();
    if n == 0 || header != expected {
        return Err(CliError::data(format!(
            "{}: header must be `t,y0,...`, found `{}`",
            path.display(),
            header.join(",")
        )));
    }
    if rows.is_empty() {
        return Err(CliError::data(format!("{}: no rows", path.display())));
    }
    let mut data = Vec::with_capacity(rows.len() * n);
    for (i, rec) in rows.iter().enumerate() {
        if rec.len() != n + 1 {
            return Err(CliError::data(format!(
                "{} row {}: {} fields, expected {}",
                path.display(),
                i + 1,
                rec.len(),
                n + 1
            )));
        }
        check_step(path, i, &rec[0])?;
        for (c, f) in rec.iter().skip(1).enumerate() {
            data.push(parse_f64(f, || format!("{} row {} column y{c}", path.display(), i + 1))?);
        }
    }
    Ok(TimeSeries::new(n, data)?)
}

/// Header `t,state`.
pub fn write_states(path: &Path, states: &[usize]) -> CliResult<()> {
    let header = ["t".to_string(), "state".to_string()];
    atomic_write(
        path,
        &csv_bytes(&header, states.iter().enumerate().map(|(t, s)| vec![t.to_string(), s.to_string()]))?,
    )
}

pub fn read_states(path: &Path) -> CliResult<Vec<usize>> {
    let (header, rows) = read_csv(path)?;
    if header != ["t", "state"] {
        return Err(CliError::data(format!("{}: header must be `t,state`", path.display())));
    }
    rows.iter()
        .enumerate()
        .map(|(i, rec)| {
            if rec.len() != 2 {
                return Err(CliError::data(format!("{} row {}: expected 2 fields", path.display(), i + 1)));
            }
            check_step(path, i, &rec[0])?;
            rec[1]
                .trim()
                .parse()
                .map_err(|_| CliError::data(format!("{} row {}: bad state `{}`", path.display(), i + 1, &rec[1])))
        })
        .collect()
}

/// Header `iter,loglik,objective`; the objective adds the transition log-prior.
pub fn write_trace(path: &Path, trace: &FitTrace) -> CliResult<()> {
    let header = ["iter".to_string(), "loglik".to_string(), "objective".to_string()];
    let rows = trace
        .loglik
        .iter()
        .zip(&trace.objective)
        .enumerate()
        .map(|(i, (l, o))| vec![i.to_string(), fmt_f64(*l), fmt_f64(*o)]);
    atomic_write(path, &csv_bytes(&header, rows)?)
}

/// Generic numeric table.
pub fn write_table(path: &Path, header: &[String], rows: Vec<Vec<String>>) -> CliResult<()> {
    atomic_write(path, &csv_bytes(header, rows.into_iter())?)
}
