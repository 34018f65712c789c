#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use popadj_core::simstudy::{aggregate_bc, generate_trial, Overlap, ScenarioConfig, Trial};
use popadj_core::{IpdDataset, RngStream};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_popadj"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn ipd_csv(d: &IpdDataset) -> String {
    let mut s = format!("{},trt,y\n", d.names.join(","));
    let y = d.binary_outcome().unwrap();
    for (i, row) in d.x.row_iter().enumerate() {
        for v in row {
            write!(s, "{v},").unwrap();
        }
        writeln!(s, "{},{}", d.trt[i], y[i]).unwrap();
    }
    s
}

/// AC patient data and BC aggregate data from one simulated replicate.
pub fn write_trials(dir: &Path, n_ac: usize, seed: u64) -> (PathBuf, PathBuf) {
    let cfg = ScenarioConfig { n_ac, ..ScenarioConfig::new(600, Overlap::Strong, 1, seed) };
    let mut rng = RngStream::new(seed, 0);
    let ac = generate_trial(&cfg, Trial::Ac, &mut rng).unwrap();
    let bc = generate_trial(&cfg, Trial::Bc, &mut rng).unwrap();
    let ald = aggregate_bc(&bc, &[0, 1]).unwrap();
    let ipd_path = dir.join("AC_IPD.csv");
    std::fs::write(&ipd_path, ipd_csv(&ac)).unwrap();
    let mut head = Vec::new();
    let mut row = Vec::new();
    for (j, name) in ald.names.iter().enumerate() {
        head.push(format!("mean.{name}"));
        row.push(ald.means[j].to_string());
        head.push(format!("sd.{name}"));
        row.push(ald.sds[j].to_string());
    }
    let c = ald.counts;
    head.extend(["y.B.sum", "N.B", "y.C.sum", "N.C"].map(String::from));
    row.extend([c.y_b, c.n_b, c.y_c, c.n_c].map(|v| v.to_string()));
    let ald_path = dir.join("BC_ALD.csv");
    std::fs::write(&ald_path, format!("{}\n{}\n", head.join(","), row.join(","))).unwrap();
    (ipd_path, ald_path)
}
