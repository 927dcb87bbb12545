//! The `cqe` command-line driver.
//!
//! Subcommands write plain data: a JSON run document (`run`), CSV tables
//! (`scan`, `residual-study`), canonical FCIDUMP text and golden eigenvalue
//! files. With timing off, every output is a pure function of its flags.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::evolution::{DilationPolicy, EstimatorConfig, ResetMode};
use crate::fock::{Basis, SparseOperator, StateVector};
use crate::hamiltonian::{build_hamiltonian, parse_fcidump, write_fcidump, IntegralSet};
use crate::models::{
    build_pairing_hamiltonian, great_circle_point, latitude_minimizer, sphere_state, PairingModel, SpherePoint,
};
use crate::oracle::{fci_solve, generator_version, GoldenRecord};
use crate::residuals::{energy, Variant};
use crate::solver::{
    cqe_run, cqe_run_observed, hartree_fock_state, CqeConfig, Execution, InitialState, IterationRecord, LineSearch,
    Status,
};

/// Directory searched for relative fixture paths that do not exist as given.
pub const FIXTURE_DIR_ENV: &str = "CQE_FIXTURE_DIR";
pub const RUN_FORMAT_VERSION: u32 = 1;
pub const SCAN_HEADER: [&str; 7] = [
    "geometry_label",
    "E_hf",
    "E_fci",
    "E_cqe",
    "iterations",
    "final_residual_norm",
    "final_variance",
];
pub const STUDY_HEADER: [&str; 6] = ["variant", "n", "norm_sq", "norm_r_sq", "variance", "energy"];

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "cqe", version, about = "Contracted quantum eigensolver driver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve one system and write a JSON run document.
    Run(RunArgs),
    /// Solve a list of fixtures and write one CSV row per point.
    Scan(ScanArgs),
    /// Per-iteration residual norms and variances for several variants.
    ResidualStudy(StudyArgs),
    /// FCIDUMP utilities.
    Fcidump {
        #[command(subcommand)]
        action: FcidumpCommand,
    },
    /// Write reference eigenvalue files for fixtures.
    Golden(GoldenArgs),
}

#[derive(Subcommand, Debug)]
pub enum FcidumpCommand {
    /// Rewrite a file in canonical order and number format.
    Normalize {
        #[arg(required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(short, long, conflicts_with = "in_place")]
        output: Option<PathBuf>,
        /// Rewrite each input file.
        #[arg(long)]
        in_place: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Exact,
    Dilated,
    Sampled,
}

#[derive(Args, Debug, Clone)]
pub struct SolverArgs {
    #[arg(long, default_value = "cse")]
    pub variant: Variant,
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    /// `backtracking`, `golden` or `fixed:<eta>`.
    #[arg(long, default_value = "backtracking")]
    pub line_search: String,
    #[arg(long, value_enum, default_value = "exact")]
    pub execution: Mode,
    /// Dilation step cap.
    #[arg(long, default_value_t = 0.5)]
    pub epsilon: f64,
    /// Dilated steps allowed between ancilla resets.
    #[arg(long, default_value_t = 10)]
    pub reset_every: usize,
    /// Finite-difference step of the residual estimator.
    #[arg(long, default_value_t = 0.01)]
    pub delta: f64,
    #[arg(long, default_value_t = 16000)]
    pub shots: u64,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Record wall-clock time per iteration (output no longer reproducible).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    pub fcidump: Option<PathBuf>,
    /// `pairing` or `pairing:<e0>,<e1>,<e3>,<t>`.
    #[arg(long)]
    pub model: Option<String>,
    /// `hf`, `fci`, `equator:<latitude>`, `circle:<theta>` or `sphere:<x>,<y>,<z>`.
    #[arg(long, default_value = "hf")]
    pub init: String,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ScanArgs {
    /// Fixture paths or glob patterns, resolved in order.
    #[arg(long, required = true, num_args = 1..)]
    pub fixtures: Vec<String>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct StudyArgs {
    #[arg(long)]
    pub fixture: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "cse,hcse,acse")]
    pub variants: Vec<Variant>,
    /// `hf` or `fci`.
    #[arg(long, default_value = "hf")]
    pub init: String,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GoldenArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub fixtures: Vec<String>,
    /// Number of lowest eigenvalues to keep.
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    #[arg(long)]
    pub output_dir: PathBuf,
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_INPUT
        }
    }
}

pub fn execute(cmd: Command) -> anyhow::Result<i32> {
    match cmd {
        Command::Run(a) => cmd_run(&a),
        Command::Scan(a) => cmd_scan(&a),
        Command::ResidualStudy(a) => cmd_residual_study(&a),
        Command::Fcidump {
            action: FcidumpCommand::Normalize {
                inputs,
                output,
                in_place,
            },
        } => {
            if !in_place && inputs.len() > 1 {
                bail!("several inputs need --in-place");
            }
            // parse everything before writing anything
            let texts = inputs
                .iter()
                .map(|p| Ok((resolve_fixture(p)?, write_fcidump(&load_fcidump(p)?))))
                .collect::<anyhow::Result<Vec<_>>>()?;
            for (path, text) in &texts {
                let target = if in_place { Some(path.as_path()) } else { output.as_deref() };
                emit(target, text.as_bytes())?;
            }
            Ok(EXIT_OK)
        }
        Command::Golden(a) => cmd_golden(&a),
    }
}

fn exit_for(status: Status) -> i32 {
    match status {
        Status::Converged => EXIT_OK,
        Status::MaxIter | Status::Stalled => EXIT_NOT_CONVERGED,
    }
}

/// Writes to `path`, or stdout when absent.
fn emit(path: Option<&Path>, bytes: &[u8]) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
            Ok(())
        }
    }
}

pub fn fixture_dir() -> PathBuf {
    std::env::var_os(FIXTURE_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("fixtures"))
}

/// `path` itself if it exists, else the same name under the fixture
/// directory, or that name with `.fcidump` appended.
pub fn resolve_fixture(path: &Path) -> anyhow::Result<PathBuf> {
    if path.exists() {
        return Ok(path.to_path_buf());
    }
    if path.is_relative() {
        let candidate = fixture_dir().join(path);
        let mut with_ext = candidate.clone().into_os_string();
        with_ext.push(".fcidump");
        for c in [candidate, PathBuf::from(with_ext)] {
            if c.exists() {
                return Ok(c);
            }
        }
    }
    bail!("fixture not found: {}", path.display())
}

fn load_fcidump(path: &Path) -> anyhow::Result<IntegralSet> {
    let path = resolve_fixture(path)?;
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    parse_fcidump(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Fixture label: the file stem.
pub fn label_of(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Expand paths and glob patterns in order; matches of one pattern are
/// sorted. Relative patterns with no match are retried under the fixture
/// directory.
pub fn expand_fixtures(patterns: &[String]) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for pat in patterns {
        let mut found = glob_sorted(pat)?;
        if found.is_empty() && Path::new(pat).is_relative() {
            found = glob_sorted(&fixture_dir().join(pat).to_string_lossy())?;
        }
        out.extend(found);
    }
    if out.is_empty() {
        bail!("no fixtures match {}", patterns.join(" "));
    }
    Ok(out)
}

fn glob_sorted(pattern: &str) -> anyhow::Result<Vec<PathBuf>> {
    let mut v = glob::glob(pattern)
        .with_context(|| format!("bad pattern {pattern}"))?
        .collect::<Result<Vec<_>, _>>()?;
    v.sort();
    Ok(v)
}

pub fn parse_model(text: &str) -> anyhow::Result<PairingModel> {
    let (name, params) = text.split_once(':').unwrap_or((text, ""));
    if name != "pairing" {
        bail!("unknown model {name:?}");
    }
    if params.is_empty() {
        return Ok(PairingModel::default());
    }
    let v = parse_floats(params, 4)?;
    Ok(PairingModel {
        e0: v[0],
        e1: v[1],
        e3: v[2],
        t: v[3],
    })
}

fn parse_floats(s: &str, n: usize) -> anyhow::Result<Vec<f64>> {
    let v = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .with_context(|| format!("bad number list {s:?}"))?;
    if v.len() != n {
        bail!("expected {n} numbers, got {s:?}");
    }
    Ok(v)
}

impl SolverArgs {
    pub fn config(&self) -> anyhow::Result<CqeConfig> {
        let line_search = match self.line_search.as_str() {
            "backtracking" => LineSearch::default(),
            "golden" => LineSearch::Golden { max_eta: 2.0, tol: 1e-4 },
            other => match other.strip_prefix("fixed:") {
                Some(eta) => LineSearch::FixedEta {
                    eta: eta.parse().with_context(|| format!("bad step {eta:?}"))?,
                },
                None => bail!("unknown line search {other:?}"),
            },
        };
        let execution = match self.execution {
            Mode::Exact => Execution::Exact,
            Mode::Dilated => Execution::Dilated {
                policy: DilationPolicy {
                    epsilon: self.epsilon,
                    max_steps_between_resets: self.reset_every,
                    reset_mode: ResetMode::Wolfe,
                    ..Default::default()
                },
            },
            Mode::Sampled => Execution::Sampled {
                estimator: EstimatorConfig {
                    delta: self.delta,
                    shots: Some(self.shots),
                    seed: self.seed,
                },
            },
        };
        let cfg = CqeConfig {
            variant: self.variant,
            residual_tolerance: self.tolerance,
            max_iterations: self.max_iter,
            line_search,
            execution,
            initial_state: InitialState::HartreeFock,
            record_timing: self.timing,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

struct System {
    h: SparseOperator,
    basis: Arc<Basis>,
    model: Option<PairingModel>,
}

impl System {
    fn from_fcidump(path: &Path) -> anyhow::Result<Self> {
        let ints = load_fcidump(path)?;
        let basis = ints.sector_basis()?;
        let h = build_hamiltonian(&ints, &basis)?;
        Ok(System { h, basis, model: None })
    }

    fn initial_state(&self, init: &str) -> anyhow::Result<InitialState> {
        let (kind, arg) = init.split_once(':').unwrap_or((init, ""));
        let on_sphere = |p: SpherePoint| -> anyhow::Result<InitialState> {
            if self.model.is_none() {
                bail!("--init {kind} needs --model pairing");
            }
            Ok(InitialState::Given(sphere_state(&self.basis, &p)?))
        };
        let number = || arg.parse::<f64>().with_context(|| format!("bad --init argument {arg:?}"));
        match kind {
            "hf" => Ok(InitialState::HartreeFock),
            "fci" => {
                let ground = fci_solve(&self.h, 1)?.remove(0);
                Ok(InitialState::Given(ground.vector))
            }
            "equator" => {
                let m = self.model.ok_or_else(|| anyhow!("--init equator needs --model pairing"))?;
                on_sphere(latitude_minimizer(&m, number()?))
            }
            "circle" => on_sphere(great_circle_point(number()?)),
            "sphere" => {
                let v = parse_floats(arg, 3)?;
                on_sphere(SpherePoint::new(v[0], v[1], v[2])?)
            }
            _ => bail!("unknown --init {init:?}"),
        }
    }
}

#[derive(Serialize)]
struct RunConfig<'a> {
    source: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<PairingModel>,
    variant: Variant,
    init: &'a str,
    residual_tolerance: f64,
    max_iterations: usize,
    line_search: LineSearch,
    execution: Execution,
}

#[derive(Serialize)]
struct RunDocument<'a> {
    format_version: u32,
    generator: String,
    /// Residual norms are Frobenius over all four indices, antisymmetric
    /// images included.
    norm_convention: &'static str,
    config: RunConfig<'a>,
    records: &'a [IterationRecord],
    final_energy: f64,
    fci_energy: f64,
    status: Status,
}

pub fn cmd_run(a: &RunArgs) -> anyhow::Result<i32> {
    let (system, source) = match (&a.fcidump, &a.model) {
        (Some(p), _) => (System::from_fcidump(p)?, p.display().to_string()),
        (None, Some(model_arg)) => {
            let m = parse_model(model_arg)?;
            let (h, basis) = build_pairing_hamiltonian(&m)?;
            let system = System {
                h,
                basis,
                model: Some(m),
            };
            (system, model_arg.clone())
        }
        (None, None) => bail!("one of --fcidump or --model is required"),
    };
    let mut cfg = a.solver.config()?;
    cfg.initial_state = system.initial_state(&a.init)?;
    let fci_energy = fci_solve(&system.h, 1)?[0].value;
    let out = cqe_run(&system.h, &system.basis, &cfg)?;
    let doc = RunDocument {
        format_version: RUN_FORMAT_VERSION,
        generator: generator_version(),
        norm_convention: "frobenius_full",
        config: RunConfig {
            source,
            model: system.model,
            variant: cfg.variant,
            init: &a.init,
            residual_tolerance: cfg.residual_tolerance,
            max_iterations: cfg.max_iterations,
            line_search: cfg.line_search,
            execution: cfg.execution,
        },
        records: &out.records,
        final_energy: out.records.last().map_or(f64::NAN, |r| r.energy),
        fci_energy,
        status: out.status,
    };
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    emit(a.output.as_deref(), text.as_bytes())?;
    Ok(exit_for(out.status))
}

struct ScanRow {
    label: String,
    e_hf: f64,
    e_fci: f64,
    e_cqe: f64,
    iterations: usize,
    residual: f64,
    variance: f64,
    status: Status,
}

fn scan_point(label: String, system: &System, cfg: &CqeConfig) -> anyhow::Result<ScanRow> {
    let e_hf = energy(&hartree_fock_state(&system.h, &system.basis)?, &system.h)?;
    let e_fci = fci_solve(&system.h, 1)?[0].value;
    let out = cqe_run(&system.h, &system.basis, cfg).with_context(|| format!("solving {label}"))?;
    let last = out.records.last().ok_or_else(|| anyhow!("no iterations recorded for {label}"))?;
    Ok(ScanRow {
        e_hf,
        e_fci,
        e_cqe: last.energy,
        iterations: last.n,
        residual: last.norm_used,
        variance: last.variance,
        status: out.status,
        label,
    })
}

pub fn cmd_scan(a: &ScanArgs) -> anyhow::Result<i32> {
    let cfg = a.solver.config()?;
    let paths = expand_fixtures(&a.fixtures)?;
    let systems = paths
        .iter()
        .map(|p| {
            let label = label_of(p);
            System::from_fcidump(p)
                .with_context(|| format!("scan point {label}"))
                .map(|s| (label, s))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let rows = systems
        .into_par_iter()
        .map(|(label, s)| scan_point(label, &s, &cfg))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SCAN_HEADER)?;
    for r in &rows {
        w.write_record([
            r.label.clone(),
            format!("{:e}", r.e_hf),
            format!("{:e}", r.e_fci),
            format!("{:e}", r.e_cqe),
            r.iterations.to_string(),
            format!("{:e}", r.residual),
            format!("{:e}", r.variance),
        ])?;
    }
    emit(a.output.as_deref(), &w.into_inner()?)?;
    let all_converged = rows.iter().all(|r| r.status == Status::Converged);
    Ok(if all_converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

pub fn cmd_residual_study(a: &StudyArgs) -> anyhow::Result<i32> {
    let system = System::from_fcidump(&a.fixture)?;
    let base = a.solver.config()?;
    let init = match a.init.as_str() {
        "hf" | "fci" => system.initial_state(&a.init)?,
        other => bail!("residual-study supports --init hf or fci, got {other:?}"),
    };
    let runs = a
        .variants
        .par_iter()
        .map(|&variant| {
            let cfg = CqeConfig {
                variant,
                initial_state: init.clone(),
                ..base.clone()
            };
            let mut rows = Vec::new();
            let out = cqe_run_observed(&system.h, &system.basis, &cfg, |_: &StateVector, r: &IterationRecord| {
                rows.push([
                    variant.to_string(),
                    r.n.to_string(),
                    format!("{:e}", r.norm_used * r.norm_used),
                    format!("{:e}", r.norm_r * r.norm_r),
                    format!("{:e}", r.variance),
                    format!("{:e}", r.energy),
                ]);
            })?;
            Ok((rows, out.status))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(STUDY_HEADER)?;
    for (rows, _) in &runs {
        for row in rows {
            w.write_record(row)?;
        }
    }
    emit(a.output.as_deref(), &w.into_inner()?)?;
    let all_converged = runs.iter().all(|(_, s)| *s == Status::Converged);
    Ok(if all_converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

pub fn cmd_golden(a: &GoldenArgs) -> anyhow::Result<i32> {
    let paths = expand_fixtures(&a.fixtures)?;
    fs::create_dir_all(&a.output_dir)?;
    for p in &paths {
        let system = System::from_fcidump(p)?;
        let record = GoldenRecord {
            fixture: label_of(p),
            eigenvalues: fci_solve(&system.h, a.k)?.into_iter().map(|e| e.value).collect(),
            generator_version: generator_version(),
        };
        let mut text = serde_json::to_string_pretty(&record)?;
        text.push('\n');
        fs::write(a.output_dir.join(format!("{}.json", record.fixture)), text)?;
    }
    Ok(EXIT_OK)
}
