//! Readers and writers for the delimited and JSON file formats.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use csv::StringRecord;
use popadj_core::data::{default_names, Outcome};
use popadj_core::mim::SynthesisSet;
use popadj_core::population::PopulationSpec;
use popadj_core::{AggregateData, ArmCounts, IpdDataset, Matrix};

use crate::error::{CliError, Result};

const TREATMENT: &str = "trt";
const BINARY: &str = "y";
const TIME: &str = "time";
const EVENT: &str = "event";

fn open(path: &Path) -> Result<csv::Reader<File>> {
    let f = File::open(path).map_err(CliError::io(path))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(f))
}

fn records(path: &Path, rdr: &mut csv::Reader<impl Read>) -> Result<Vec<StringRecord>> {
    rdr.records().collect::<std::result::Result<_, _>>().map_err(|source| CliError::Csv { path: path.into(), source })
}

fn headers(path: &Path, rdr: &mut csv::Reader<impl Read>) -> Result<Vec<String>> {
    let h = rdr.headers().map_err(|source| CliError::Csv { path: path.into(), source })?;
    Ok(h.iter().map(|s| s.trim_matches('"').to_string()).collect())
}

/// Parses one cell; row numbers count data rows from 1.
fn cell(path: &Path, rec: &StringRecord, row: usize, col: usize, name: &str) -> Result<f64> {
    let s = rec.get(col).unwrap_or("").trim_matches('"');
    if s.is_empty() || s == "NA" || s == "NaN" {
        return Err(CliError::MissingData { path: path.into(), row, column: name.into() });
    }
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| CliError::Value { path: path.into(), row, column: name.into(), msg: format!("{s:?} is not a number") })
}

fn indicator(path: &Path, rec: &StringRecord, row: usize, col: usize, name: &str) -> Result<u8> {
    match cell(path, rec, row, col, name)? {
        v if v == 0.0 => Ok(0),
        v if v == 1.0 => Ok(1),
        v => Err(CliError::Value { path: path.into(), row, column: name.into(), msg: format!("{v} is not 0 or 1") }),
    }
}

fn find(path: &Path, header: &[String], name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::Schema { path: path.into(), msg: format!("missing column {name:?}") })
}

/// Patient-level data with a header row. `trt` and either `y` or `time` and
/// `event` are required; every other column is a covariate.
pub fn read_ipd(path: &Path) -> Result<IpdDataset> {
    let mut rdr = open(path)?;
    let header = headers(path, &mut rdr)?;
    let trt_col = find(path, &header, TREATMENT)?;
    let binary = header.iter().any(|h| h == BINARY);
    let outcome_cols: Vec<usize> = if binary {
        vec![find(path, &header, BINARY)?]
    } else {
        let missing = |msg: &str| CliError::Schema { path: path.into(), msg: msg.into() };
        let t = find(path, &header, TIME).map_err(|_| missing("missing outcome column \"y\" (or \"time\" and \"event\")"))?;
        vec![t, find(path, &header, EVENT)?]
    };
    let covs: Vec<usize> = (0..header.len()).filter(|c| *c != trt_col && !outcome_cols.contains(c)).collect();
    if covs.is_empty() {
        return Err(CliError::Schema { path: path.into(), msg: "no covariate columns".into() });
    }
    let recs = records(path, &mut rdr)?;
    if recs.is_empty() {
        return Err(CliError::Schema { path: path.into(), msg: "no data rows".into() });
    }
    let mut x = Vec::with_capacity(recs.len() * covs.len());
    let mut trt = Vec::with_capacity(recs.len());
    let (mut y, mut time, mut event) = (Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in recs.iter().enumerate() {
        let row = i + 1;
        for &c in &covs {
            x.push(cell(path, rec, row, c, &header[c])?);
        }
        trt.push(indicator(path, rec, row, trt_col, TREATMENT)?);
        if binary {
            y.push(indicator(path, rec, row, outcome_cols[0], BINARY)?);
        } else {
            let t = cell(path, rec, row, outcome_cols[0], TIME)?;
            if t <= 0.0 {
                return Err(CliError::Value { path: path.into(), row, column: TIME.into(), msg: format!("{t} is not positive") });
            }
            time.push(t);
            event.push(indicator(path, rec, row, outcome_cols[1], EVENT)?);
        }
    }
    let names = covs.iter().map(|&c| header[c].clone()).collect();
    let x = Matrix::from_vec(recs.len(), covs.len(), x).expect("row-major fill");
    let outcome = if binary { Outcome::Binary(y) } else { Outcome::Survival { time, event } };
    IpdDataset::new(names, x, trt, outcome).map_err(|e| CliError::Schema { path: path.into(), msg: e.to_string() })
}

/// Aggregate data in one row: `mean.<name>` and `sd.<name>` per covariate
/// and the event counts `y.B.sum`, `N.B`, `y.C.sum`, `N.C`. Without
/// `require_counts` the counts may be absent and are then zero.
pub fn read_ald_with(path: &Path, require_counts: bool) -> Result<AggregateData> {
    let mut rdr = open(path)?;
    let header = headers(path, &mut rdr)?;
    let recs = records(path, &mut rdr)?;
    let rec = match recs.as_slice() {
        [r] => r,
        _ => return Err(CliError::Schema { path: path.into(), msg: format!("expected one data row, found {}", recs.len()) }),
    };
    let names: Vec<String> = header.iter().filter_map(|h| h.strip_prefix("mean.")).map(String::from).collect();
    if names.is_empty() {
        return Err(CliError::Schema { path: path.into(), msg: "no \"mean.<covariate>\" columns".into() });
    }
    let (mut means, mut sds) = (Vec::new(), Vec::new());
    for name in &names {
        let (m, s) = (format!("mean.{name}"), format!("sd.{name}"));
        means.push(cell(path, rec, 1, find(path, &header, &m)?, &m)?);
        let sd = cell(path, rec, 1, find(path, &header, &s)?, &s)?;
        if sd <= 0.0 {
            return Err(CliError::Value { path: path.into(), row: 1, column: s, msg: format!("{sd} is not positive") });
        }
        sds.push(sd);
    }
    let count_cols = ["y.B.sum", "N.B", "y.C.sum", "N.C"];
    let counts = if require_counts || count_cols.iter().any(|c| header.iter().any(|h| h == c)) {
        let mut v = [0u64; 4];
        for (slot, name) in v.iter_mut().zip(count_cols) {
            let c = cell(path, rec, 1, find(path, &header, name)?, name)?;
            if c < 0.0 || c.fract() != 0.0 {
                return Err(CliError::Value { path: path.into(), row: 1, column: name.into(), msg: format!("{c} is not a count") });
            }
            *slot = c as u64;
        }
        let [y_b, n_b, y_c, n_c] = v;
        for (y, n, col) in [(y_b, n_b, "y.B.sum"), (y_c, n_c, "y.C.sum")] {
            if y > n {
                return Err(CliError::Value { path: path.into(), row: 1, column: col.into(), msg: format!("{y} events out of {n}") });
            }
        }
        ArmCounts { y_b, n_b, y_c, n_c }
    } else {
        ArmCounts { y_b: 0, n_b: 0, y_c: 0, n_c: 0 }
    };
    Ok(AggregateData { names, means, sds, effect_modifiers: Vec::new(), counts })
}

pub fn read_ald(path: &Path) -> Result<AggregateData> {
    read_ald_with(path, true)
}

/// Reorders aggregate covariates to the patient data's columns and flags
/// the named effect modifiers.
pub fn align(ald: &AggregateData, ipd: &IpdDataset, effect_modifiers: &[String]) -> Result<AggregateData> {
    let mut out = AggregateData { effect_modifiers: Vec::new(), ..ald.clone() };
    out.names.clear();
    out.means.clear();
    out.sds.clear();
    for name in &ipd.names {
        let j = ald.names.iter().position(|n| n == name).ok_or_else(|| {
            CliError::Config(format!("covariate {name:?} of the patient data has no aggregate summary"))
        })?;
        out.names.push(name.clone());
        out.means.push(ald.means[j]);
        out.sds.push(ald.sds[j]);
    }
    if effect_modifiers.is_empty() {
        return Err(CliError::Config("no effect modifiers given".into()));
    }
    for em in effect_modifiers {
        let j = ipd.column_index(em).ok_or_else(|| CliError::Config(format!("unknown effect modifier {em:?}")))?;
        if !out.effect_modifiers.contains(&j) {
            out.effect_modifiers.push(j);
        }
    }
    Ok(out)
}

pub fn read_population_spec(path: &Path) -> Result<PopulationSpec> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|source| CliError::Json { path: path.into(), source })
}

pub fn write_population_spec(spec: &PopulationSpec, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(spec).map_err(|source| CliError::Json { path: path.into(), source })?;
    fs::write(path, text + "\n").map_err(CliError::io(path))
}

/// One comma-separated file per synthesis, `synthesis_<m>.csv`, with the
/// covariate columns, `trt` and `y`.
pub fn write_synthesis_set(set: &SynthesisSet, names: &[String], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let names = if names.len() == set.x_star.cols() { names.to_vec() } else { default_names(set.x_star.cols()) };
    let width = set.outcomes.len().to_string().len();
    for (m, y) in set.outcomes.iter().enumerate() {
        let path = dir.join(format!("synthesis_{:0width$}.csv", m + 1));
        let f = File::create(&path).map_err(CliError::io(&path))?;
        let mut w = BufWriter::new(f);
        let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
            writeln!(w, "{},{TREATMENT},{BINARY}", names.join(","))?;
            for ((row, z), yi) in set.x_star.row_iter().zip(&set.z_star).zip(y) {
                for v in row {
                    write!(w, "{v},")?;
                }
                writeln!(w, "{z},{yi}")?;
            }
            w.flush()
        };
        write(&mut w).map_err(CliError::io(&path))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn reads_binary_ipd() {
        let f = file("X1,X2,X3,X4,trt,y\n0.1,0.2,0.3,0.4,1,0\n0.5,0.6,0.7,0.8,0,1\n1,2,3,4,1,1\n");
        let d = read_ipd(f.path()).unwrap();
        assert_eq!((d.n(), d.k()), (3, 4));
        assert_eq!(d.trt, vec![1, 0, 1]);
        assert_eq!(d.x[(2, 3)], 4.0);
    }

    #[test]
    fn quoted_headers_like_r_output() {
        let f = file("\"X1\",\"trt\",\"y\"\n0.1,1,0\n0.2,0,1\n");
        assert_eq!(read_ipd(f.path()).unwrap().names, vec!["X1"]);
    }

    #[test]
    fn reads_survival_ipd() {
        let f = file("age,trt,time,event\n50,1,2.5,1\n61,0,3.0,0\n");
        let d = read_ipd(f.path()).unwrap();
        assert!(matches!(d.outcome, Outcome::Survival { .. }));
    }

    #[test]
    fn ipd_errors() {
        let bad_trt = file("X1,trt,y\n0.1,2,0\n");
        assert_eq!(read_ipd(bad_trt.path()).unwrap_err().kind(), "ValueError");
        let empty = file("X1,trt,y\n0.1,,0\n");
        assert_eq!(read_ipd(empty.path()).unwrap_err().kind(), "MissingDataError");
        let na = file("X1,trt,y\nNA,1,0\n");
        assert_eq!(read_ipd(na.path()).unwrap_err().kind(), "MissingDataError");
        let no_trt = file("X1,y\n0.1,0\n");
        assert_eq!(read_ipd(no_trt.path()).unwrap_err().kind(), "SchemaError");
        let no_y = file("X1,trt\n0.1,0\n");
        assert_eq!(read_ipd(no_y.path()).unwrap_err().kind(), "SchemaError");
        let text = file("X1,trt,y\nabc,1,0\n");
        assert_eq!(read_ipd(text.path()).unwrap_err().kind(), "ValueError");
    }

    const ALD: &str = "mean.X1,sd.X1,mean.X2,sd.X2,y.B.sum,N.B,y.C.sum,N.C\n0.6,0.4,0.6,0.4,120,400,80,200\n";

    #[test]
    fn reads_ald() {
        let f = file(ALD);
        let a = read_ald(f.path()).unwrap();
        assert_eq!(a.names, vec!["X1", "X2"]);
        assert_eq!(a.counts, ArmCounts { y_b: 120, n_b: 400, y_c: 80, n_c: 200 });
    }

    #[test]
    fn ald_errors() {
        let over = file("mean.X1,sd.X1,y.B.sum,N.B,y.C.sum,N.C\n0.6,0.4,401,400,80,200\n");
        assert_eq!(read_ald(over.path()).unwrap_err().kind(), "ValueError");
        let no_sd = file("mean.X1,sd.X1,mean.X2,y.B.sum,N.B,y.C.sum,N.C\n0.6,0.4,0.6,1,400,80,200\n");
        assert_eq!(read_ald(no_sd.path()).unwrap_err().kind(), "SchemaError");
        let zero_sd = file("mean.X1,sd.X1,y.B.sum,N.B,y.C.sum,N.C\n0.6,0,1,400,80,200\n");
        assert_eq!(read_ald(zero_sd.path()).unwrap_err().kind(), "ValueError");
        let no_counts = file("mean.X1,sd.X1\n0.6,0.4\n");
        assert_eq!(read_ald(no_counts.path()).unwrap_err().kind(), "SchemaError");
        assert_eq!(read_ald_with(no_counts.path(), false).unwrap().counts.n_b, 0);
    }

    #[test]
    fn align_reorders_and_flags() {
        let a = read_ald(file(ALD).path()).unwrap();
        let f = file("X2,X1,trt,y\n0.1,0.2,1,0\n0.3,0.4,0,1\n");
        let d = read_ipd(f.path()).unwrap();
        let al = align(&a, &d, &["X1".into()]).unwrap();
        assert_eq!(al.names, vec!["X2", "X1"]);
        assert_eq!(al.effect_modifiers, vec![1]);
        assert_eq!(align(&a, &d, &["X9".into()]).unwrap_err().kind(), "ConfigError");
    }
}
