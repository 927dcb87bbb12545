#![allow(dead_code)]

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use cqe::fock::{Basis, SparseOperator};
use cqe::hamiltonian::{build_hamiltonian, parse_fcidump, IntegralSet};

pub const H2: [&str; 8] = ["h2_0.50", "h2_0.74", "h2_1.00", "h2_1.25", "h2_1.50", "h2_1.75", "h2_2.00", "h2_2.50"];
pub const H4: [&str; 8] = ["h4_0.80", "h4_0.90", "h4_1.00", "h4_1.10", "h4_1.25", "h4_1.50", "h4_1.75", "h4_2.00"];

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn fixture_path(name: &str) -> PathBuf {
    repo_root().join("fixtures").join(format!("{name}.fcidump"))
}

pub struct Fixture {
    pub name: &'static str,
    pub ints: IntegralSet,
    pub basis: Arc<Basis>,
    pub h: SparseOperator,
}

pub fn load(name: &'static str) -> Fixture {
    let text = std::fs::read_to_string(fixture_path(name)).unwrap();
    let ints = parse_fcidump(&text).unwrap();
    let basis = ints.sector_basis().unwrap();
    let h = build_hamiltonian(&ints, &basis).unwrap();
    Fixture { name, ints, basis, h }
}

/// Report line that bypasses the test harness's output capture.
pub fn report(label: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "[{verdict}] {label}: {detail}");
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}
