//! End-to-end checks of the `cqe` binary.

mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::repo_root;
use cqe::hamiltonian::reduced_hamiltonian_k;
use serde_json::Value;

fn cqe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cqe"))
        .args(args)
        .current_dir(repo_root())
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = cqe(args);
    assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Output of a run that may stop at the iteration cap (exit 2).
fn capped(args: &[&str]) -> String {
    let out = cqe(args);
    assert!(matches!(out.status.code(), Some(0 | 2)), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn table(csv_text: &str) -> Vec<csv::StringRecord> {
    csv::Reader::from_reader(csv_text.as_bytes()).records().map(Result::unwrap).collect()
}

fn num(row: &csv::StringRecord, i: usize) -> f64 {
    row[i].parse().unwrap()
}

#[test]
fn run_h2_reaches_fci() {
    let doc: Value = serde_json::from_str(&ok(&["run", "--fcidump", "h2_0.74", "--variant", "cse"])).unwrap();
    assert_eq!(doc["status"], "converged");
    let e = doc["final_energy"].as_f64().unwrap();
    let fci = doc["fci_energy"].as_f64().unwrap();
    assert!((e - fci).abs() < 1e-6, "{e} vs {fci}");
    assert!(!doc["records"].as_array().unwrap().is_empty());
}

#[test]
fn pairing_equator_start_stays_above_ground() {
    let doc: Value = serde_json::from_str(&ok(&[
        "run", "--model", "pairing", "--variant", "acse", "--init", "equator:0.3",
    ]))
    .unwrap();
    assert_eq!(doc["status"], "converged");
    let e = doc["final_energy"].as_f64().unwrap();
    let ground = doc["fci_energy"].as_f64().unwrap();
    assert!(e - ground > 0.1, "{e} vs {ground}");
}

#[test]
fn missing_input_exits_1_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("run.json");
    let out = cqe(&["run", "--fcidump", "no_such_file", "-o", target.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!target.exists());
    assert!(!out.stderr.is_empty());
}

#[test]
fn empty_glob_exits_1() {
    assert_eq!(cqe(&["scan", "--fixtures", "nothing_*.fcidump"]).status.code(), Some(1));
}

#[test]
fn bad_arguments_exit_1() {
    assert_eq!(cqe(&["run", "--fcidump", "h2_0.74", "--line-search", "bogus"]).status.code(), Some(1));
    assert_eq!(cqe(&["run"]).status.code(), Some(1));
}

#[test]
fn h2_scan_matches_fci() {
    let rows = table(&ok(&["scan", "--fixtures", "h2_*.fcidump"]));
    assert_eq!(rows.len(), 8);
    for row in &rows {
        assert!(num(row, 3) - num(row, 2) < 1e-6, "{row:?}");
        assert!(num(row, 1) >= num(row, 2) - 1e-12, "{row:?}");
    }
}

#[test]
fn h4_scan_curvature_peaks_at_square() {
    let rows = table(&capped(&["scan", "--fixtures", "h4_*.fcidump", "--max-iter", "1"]));
    let labels: Vec<&str> = rows.iter().map(|r| &r[0]).collect();
    let fci: Vec<f64> = rows.iter().map(|r| num(r, 2)).collect();
    let (peak, _) = (1..fci.len() - 1)
        .map(|i| (i, (fci[i - 1] - 2.0 * fci[i] + fci[i + 1]).abs()))
        .fold((0, 0.0), |best, c| if c.1 > best.1 { c } else { best });
    assert_eq!(labels[peak], "h4_1.00", "{labels:?} {fci:?}");
}

#[test]
fn residual_study_bounds_hold() {
    let path = common::fixture_path("h4_1.00");
    let f = common::load("h4_1.00");
    let k_norm = reduced_hamiltonian_k(&f.ints, f.basis.n_electrons).unwrap().frobenius_norm();
    let rows = table(&ok(&["residual-study", "--fixture", path.to_str().unwrap()]));
    for v in ["cse", "hcse", "acse"] {
        let trajectory: Vec<_> = rows.iter().filter(|r| &r[0] == v).collect();
        assert!(trajectory.len() > 1, "{v}");
        let last = trajectory.last().unwrap();
        assert!(num(last, 2).sqrt() <= 1e-6, "{v} did not reach tolerance");
    }
    for row in &rows {
        assert!(num(row, 4) <= k_norm * num(row, 3).sqrt() + 1e-14, "{row:?}");
    }
}

#[test]
fn residual_study_from_eigenvector_is_one_row() {
    let rows = table(&ok(&["residual-study", "--fixture", "h4_1.00", "--init", "fci"]));
    assert_eq!(rows.len(), 3);
    for row in &rows {
        assert!(num(row, 2) < 1e-12 && num(row, 4) < 1e-12, "{row:?}");
    }
}

#[test]
fn outputs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let paths = [dir.path().join("a.json"), dir.path().join("b.json")];
    for p in &paths {
        capped(&["run", "--fcidump", "h4_1.25", "--execution", "sampled", "--seed", "3", "--max-iter", "4", "-o", p.to_str().unwrap()]);
    }
    assert_eq!(std::fs::read(&paths[0]).unwrap(), std::fs::read(&paths[1]).unwrap());
}

fn python_has_jsonschema() -> bool {
    Command::new("python3")
        .args(["-c", "import jsonschema"])
        .output()
        .is_ok_and(|o| o.status.success())
}

#[test]
fn run_documents_match_schema() {
    if !python_has_jsonschema() {
        eprintln!("python3 jsonschema unavailable; schema check skipped");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let runs: [&[&str]; 3] = [
        &["run", "--fcidump", "h2_1.00"],
        &["run", "--model", "pairing", "--init", "circle:0.4", "--execution", "dilated", "--timing"],
        &["run", "--fcidump", "h2_0.74", "--execution", "sampled", "--seed", "1", "--line-search", "fixed:0.3", "--max-iter", "3"],
    ];
    let mut files = Vec::new();
    for (i, args) in runs.iter().enumerate() {
        let p = dir.path().join(format!("{i}.json"));
        let mut args = args.to_vec();
        args.extend(["-o", p.to_str().unwrap()]);
        capped(&args);
        files.push(p);
    }
    let status = Command::new("python3")
        .arg(repo_root().join("scripts/validate_run.py"))
        .args(&files)
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn normalize_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let once = dir.path().join("once.fcidump");
    let twice = dir.path().join("twice.fcidump");
    let src = common::fixture_path("h4_1.50");
    ok(&["fcidump", "normalize", src.to_str().unwrap(), "-o", once.to_str().unwrap()]);
    ok(&["fcidump", "normalize", once.to_str().unwrap(), "-o", twice.to_str().unwrap()]);
    let a = std::fs::read(&once).unwrap();
    assert_eq!(a, std::fs::read(&twice).unwrap());
    assert_eq!(a, std::fs::read(Path::new(&src)).unwrap());
}
