//! Performance tables recomputed from persisted per-replicate estimates.

use std::fs;
use std::path::Path;

use popadj_core::simstudy::{Method, ReplicateResult};

use crate::error::{CliError, Result};
use crate::simulate::{performance_table, summarize, RAW_HEADER};

fn number(path: &Path, row: usize, column: &str, s: &str) -> Result<f64> {
    if s == "NA" {
        return Ok(f64::NAN);
    }
    s.parse().map_err(|_| CliError::Value { path: path.into(), row, column: column.into(), msg: format!("{s:?} is not a number") })
}

/// Reads one raw estimates file written by the simulate command.
pub fn read_raw(path: &Path) -> Result<Vec<ReplicateResult>> {
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
    let (scenario, method) = name
        .split_once("__")
        .ok_or_else(|| CliError::Schema { path: path.into(), msg: "expected <scenario>__<method>.tsv".into() })?;
    let method = Method::parse(method).map_err(|e| CliError::Schema { path: path.into(), msg: e.to_string() })?;
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    let mut lines = text.lines();
    if lines.next() != Some(RAW_HEADER) {
        return Err(CliError::Schema { path: path.into(), msg: "unexpected header".into() });
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let row = i + 1;
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 6 {
                return Err(CliError::Schema { path: path.into(), msg: format!("row {row} has {} fields", f.len()) });
            }
            let replicate =
                f[0].parse().map_err(|_| CliError::Value { path: path.into(), row, column: "replicate".into(), msg: f[0].into() })?;
            Ok(ReplicateResult {
                scenario: scenario.into(),
                replicate,
                method,
                point: number(path, row, "point", f[1])?,
                variance: number(path, row, "variance", f[2])?,
                ci: (number(path, row, "ci_lo", f[3])?, number(path, row, "ci_hi", f[4])?),
                error: (!f[5].is_empty()).then(|| f[5].to_string()),
            })
        })
        .collect()
}

/// Performance table of every raw file in `dir`, in file-name order.
pub fn report(dir: &Path) -> Result<String> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(CliError::io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "tsv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Config(format!("no raw estimate files in {}", dir.display())));
    }
    let mut all = Vec::new();
    for p in &paths {
        all.extend(read_raw(p)?);
    }
    Ok(performance_table(&summarize(&all)))
}
