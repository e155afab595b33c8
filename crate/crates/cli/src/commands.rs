//! Command implementations. Each returns the rows it wrote so tests can
//! check them without re-reading files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use uisim::engine::calib::{check, idle_entry_schedule};
use uisim::engine::{VariantConfig, DEFAULT_PMP_ENTRIES};
use uisim::harness::isolation::run_isolation_suite;
use uisim::harness::probe::{probe_trace, TargetState};
use uisim::harness::pto::{max_sustainable_frequency, Mix};
use uisim::harness::sweep::{cells, run_cell, to_csv, SweepResult, SweepSpec};
use uisim::harness::HarnessError;
use uisim::kernel::Scheme;
use uisim::trace::TRACE_HEADER;

use crate::config::{ConfigError, RunConfig};

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_CHECK: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("simulation failed: {0}")]
    Sim(#[from] HarnessError),
    #[error("cannot write {path}: {err}")]
    Io { path: String, err: std::io::Error },
    #[error("{0}")]
    Usage(String),
    /// A verification the command exists to perform did not hold.
    #[error("{0}")]
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Check(_) => EXIT_CHECK,
            _ => EXIT_CONFIG,
        }
    }
}

/// Captured standard output, so commands stay testable.
pub type Out = String;

fn write_file(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    let io = |err| CliError::Io { path: dir.join(name).display().to_string(), err };
    fs::create_dir_all(dir).map_err(io)?;
    fs::write(dir.join(name), text).map_err(|err| CliError::Io { path: dir.join(name).display().to_string(), err })
}

pub fn verify_latency(cfg: &RunConfig, out: &mut Out) -> Result<(), CliError> {
    let k = cfg.machine.as_ref().map_or(DEFAULT_PMP_ENTRIES, |m| m.pmp_entries);
    let want = cfg.variant.as_deref().map(str::to_ascii_lowercase);
    let mut bad = Vec::new();
    writeln!(out, "{:<10} {:>8} {:>8}", "anchor", "expected", "actual").unwrap();
    for (a, actual) in check(&cfg.calibration(), k) {
        if want.as_deref().is_some_and(|w| a.name != w && !a.name.starts_with(&format!("{w}-"))) {
            continue;
        }
        let ok = actual == a.expected;
        writeln!(out, "{:<10} {:>8} {:>8} {}", a.name, a.expected, actual, if ok { "ok" } else { "MISMATCH" }).unwrap();
        if !ok {
            bad.push(format!("{} (expected {}, got {actual})", a.name, a.expected));
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(format!("latency mismatch: {}", bad.join(", "))))
    }
}

/// Run cells on a bounded pool; the result is sorted, so the worker count
/// never changes the output.
fn run_cells(spec: &SweepSpec, jobs: usize) -> Result<SweepResult, CliError> {
    let cs = cells(spec)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| CliError::Usage(e.to_string()))?;
    let rows = pool.install(|| cs.par_iter().map(|c| run_cell(c, spec)).collect::<Result<Vec<_>, _>>())?;
    let mut res = SweepResult::default();
    for r in rows {
        res.push(r);
    }
    res.sort();
    Ok(res)
}

fn single(cfg: &RunConfig) -> Result<SweepSpec, CliError> {
    let mut spec = SweepSpec::empty();
    spec.schemes = vec![cfg.scheme()?];
    spec.costs = cfg.costs();
    spec.seed = cfg.seed();
    Ok(spec)
}

pub fn run_latency(cfg: &RunConfig, states: Vec<TargetState>, samples: usize, jobs: usize, out: &mut Out) -> Result<SweepResult, CliError> {
    let mut spec = single(cfg)?;
    spec.latency_states = states;
    spec.latency_samples = samples;
    let res = run_cells(&spec, jobs)?;
    write_file(&cfg.out(), "latency.csv", &res.latency_csv())?;
    writeln!(out, "{:<10} {:<9} {:>6} {:>8} {:>6}", "scheme", "state", "n", "avg", "max").unwrap();
    for r in &res.latency {
        writeln!(out, "{:<10} {:<9} {:>6} {:>8.1} {:>6}", r.scheme, r.state.name(), r.n, r.avg, r.max).unwrap();
    }
    Ok(res)
}

pub fn run_pto(cfg: &RunConfig, mixes: Vec<Mix>, freqs: Vec<u64>, max: bool, jobs: usize, out: &mut Out) -> Result<SweepResult, CliError> {
    let mut spec = single(cfg)?;
    spec.pto_mixes = mixes;
    spec.pto_freqs = freqs;
    let res = run_cells(&spec, jobs)?;
    write_file(&cfg.out(), "pto.csv", &res.pto_csv())?;
    writeln!(out, "{:<10} {:<9} {:>8} {:>9} sustainable", "scheme", "mix", "freq_hz", "jitter").unwrap();
    for r in &res.pto {
        writeln!(out, "{:<10} {:<9} {:>8} {:>8.3}% {}", r.scheme, r.mix.name(), r.freq_hz, 100.0 * r.jitter_norm, r.sustainable).unwrap();
    }
    if max {
        for &mix in &spec.pto_mixes {
            let f = max_sustainable_frequency(&spec.schemes[0], &spec.costs, mix, 2_000_000, spec.seed)?;
            writeln!(out, "max sustainable ({}): {f} Hz", mix.name()).unwrap();
        }
    }
    Ok(res)
}

pub fn run_modbus(cfg: &RunConfig, bauds: Vec<u64>, window: u64, jobs: usize, out: &mut Out) -> Result<SweepResult, CliError> {
    let mut spec = single(cfg)?;
    spec.modbus_bauds = bauds;
    spec.modbus_window = window;
    let res = run_cells(&spec, jobs)?;
    write_file(&cfg.out(), "modbus.csv", &res.modbus_csv())?;
    writeln!(out, "{:<10} {:>8} {:>7} sustainable", "scheme", "baud", "fps").unwrap();
    for r in &res.modbus {
        writeln!(out, "{:<10} {:>8} {:>7.1} {}", r.scheme, r.baud, r.fps, r.sustainable).unwrap();
    }
    Ok(res)
}

pub fn run_sweep(cfg: &RunConfig, jobs: usize, out: &mut Out) -> Result<SweepResult, CliError> {
    let spec = cfg.sweep_spec()?;
    let res = run_cells(&spec, jobs)?;
    let dir = cfg.out();
    write_file(&dir, "latency.csv", &res.latency_csv())?;
    write_file(&dir, "pto.csv", &res.pto_csv())?;
    write_file(&dir, "modbus.csv", &res.modbus_csv())?;
    writeln!(out, "latency rows {}, pto rows {}, modbus rows {}", res.latency.len(), res.pto.len(), res.modbus.len()).unwrap();
    Ok(res)
}

#[derive(Debug, Serialize)]
struct IsolationRow {
    variant: String,
    scenario: String,
    violation: String,
    passed: bool,
    preempted: bool,
    terminated: bool,
    cause: bool,
    context: bool,
    foreign_writes: usize,
    ran: u64,
}

pub const ISOLATION_HEADER: [&str; 10] =
    ["variant", "scenario", "violation", "passed", "preempted", "terminated", "cause", "context", "foreign_writes", "ran"];

pub fn run_isolate(cfg: &RunConfig, out: &mut Out) -> Result<usize, CliError> {
    let variant = match cfg.scheme()? {
        Scheme::Extension(c) => c.matches_preset().ok_or_else(|| CliError::Usage("isolation runs on the v1..v5 presets".into()))?,
        other => return Err(CliError::Usage(format!("isolation needs an extension variant, not {}", other.label()))),
    };
    let report = run_isolation_suite(variant)?;
    let rows: Vec<IsolationRow> = report
        .cases
        .iter()
        .map(|c| IsolationRow {
            variant: c.variant.name().into(),
            scenario: c.scenario.name().into(),
            violation: c.violation.name().into(),
            passed: c.passed(),
            preempted: c.preempted_ok,
            terminated: c.terminated,
            cause: c.cause_ok,
            context: c.context_ok,
            foreign_writes: c.foreign_writes.len(),
            ran: c.ran,
        })
        .collect();
    write_file(&cfg.out(), "isolation.csv", &to_csv(&ISOLATION_HEADER, &rows))?;
    for c in &report.cases {
        writeln!(out, "{c}").unwrap();
    }
    let n = report.cases.len();
    let passed = report.pass_count();
    writeln!(out, "{passed}/{n} passed").unwrap();
    if passed == n {
        Ok(passed)
    } else {
        Err(CliError::Check(format!("isolation: {passed}/{n} passed")))
    }
}

/// Entry Gantt for the variant, then the machine trace of a short probe run.
pub fn trace(cfg: &RunConfig, state: TargetState, samples: usize, out: &mut Out) -> Result<String, CliError> {
    let scheme = cfg.scheme()?;
    if let Some(c) = scheme.config() {
        gantt(c, out);
    }
    let (_, records) = probe_trace(&scheme, &cfg.costs(), state, samples)?;
    let mut text = String::from(TRACE_HEADER);
    text.push('\n');
    for r in &records {
        writeln!(text, "{r}").unwrap();
    }
    write_file(&cfg.out(), "trace.csv", &text)?;
    writeln!(out, "{} trace records", records.len()).unwrap();
    Ok(text)
}

pub fn gantt(c: &VariantConfig, out: &mut Out) {
    let s = idle_entry_schedule(c);
    writeln!(out, "{}", s).unwrap();
}
