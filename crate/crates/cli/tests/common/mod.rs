//! Fixture files for the command-line tests.

#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ordcic::copula::{calibrate_theta, CopulaFamily};
use ordcic::montecarlo::{simulate_cells, DesignCase};
use ordcic::ordered_model::{CellParams, Thresholds};

pub const HEADER: &str = "outcome,group,time,x,w,z,inst";

/// Four Case 2-a cells with shifted consumption intercepts in the later
/// period and the treated group, written as `outcome,group,time,x,w,z,inst`.
/// The instrument is the sign of the excluded reporting variable.
pub fn write_design_fixture(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let copula = calibrate_theta(CopulaFamily::Frank, -0.5).unwrap();
    let base = DesignCase::Case2a.params(copula);
    let shifted = |d: f64| CellParams {
        eta_bar: vec![base.eta_bar[0] + d, base.eta_bar[1], base.eta_bar[2]],
        ..base.clone()
    };
    let params = [shifted(0.0), shifted(0.3), shifted(0.2), shifted(0.8)];
    let law = DesignCase::Case2a.covariate_law();
    let cells = simulate_cells(&params, &law, n, seed, &Thresholds::default()).unwrap();
    let mut text = format!("{HEADER}\n");
    for (c, set) in cells.iter().enumerate() {
        let (g, t) = (c / 2, c % 2);
        for i in 0..set.len() {
            let x = set.x_row(i);
            let z = set.z_row(i);
            let inst = i64::from(z[0] >= 0.0);
            writeln!(text, "{},{g},{t},{:?},{:?},{:?},{inst}", set.outcomes[i], x[0], x[1], z[0]).unwrap();
        }
    }
    let path = dir.join("design.csv");
    std::fs::write(&path, text).unwrap();
    path
}

pub fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

pub fn ordcic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ordcic"))
        .args(args)
        .env_remove("ORDCIC_THREADS")
        .output()
        .unwrap()
}

pub fn json(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

pub fn floats(v: &serde_json::Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}
