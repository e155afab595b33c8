//! Cartesian experiment sweeps and their CSV tables.
//!
//! Cells are independent simulations, so callers may run them in any order
//! or in parallel; [`SweepResult::push`] followed by [`SweepResult::sort`]
//! gives the same tables either way.

use serde::{Deserialize, Serialize};

use crate::kernel::{KernelCosts, Scheme};

use super::modbus::run_modbus_coloc;
use super::probe::{run_latency_probe, TargetState};
use super::pto::{max_sustainable_frequency, pto_duration, run_pto, Mix};
use super::HarnessError;

pub const LATENCY_HEADER: [&str; 5] = ["scheme", "state", "avg", "max", "n"];
pub const PTO_HEADER: [&str; 5] = ["scheme", "mix", "freq_hz", "jitter_norm", "sustainable"];
pub const MODBUS_HEADER: [&str; 4] = ["scheme", "baud", "fps", "sustainable"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub scheme: String,
    pub state: TargetState,
    pub avg: f64,
    pub max: u64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtoRow {
    pub scheme: String,
    pub mix: Mix,
    pub freq_hz: u64,
    pub jitter_norm: f64,
    pub sustainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModbusRow {
    pub scheme: String,
    pub baud: u64,
    pub fps: f64,
    pub sustainable: bool,
}

/// The operating points of a sweep. Every list is crossed with `schemes`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub schemes: Vec<Scheme>,
    pub costs: KernelCosts,
    pub seed: u64,
    pub latency_states: Vec<TargetState>,
    pub latency_samples: usize,
    pub pto_mixes: Vec<Mix>,
    pub pto_freqs: Vec<u64>,
    /// Extra PTO points as fractions of each scheme's maximum sustainable
    /// frequency under the same mix.
    pub pto_fractions: Vec<f64>,
    pub modbus_bauds: Vec<u64>,
    pub modbus_window: u64,
}

impl SweepSpec {
    pub fn empty() -> Self {
        Self {
            schemes: Vec::new(),
            costs: KernelCosts::default(),
            seed: 0,
            latency_states: Vec::new(),
            latency_samples: 10_000,
            pto_mixes: Vec::new(),
            pto_freqs: Vec::new(),
            pto_fractions: Vec::new(),
            modbus_bauds: Vec::new(),
            modbus_window: super::modbus::MODBUS_WINDOW,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Latency { scheme: Scheme, state: TargetState },
    Pto { scheme: Scheme, mix: Mix, freq_hz: u64 },
    Modbus { scheme: Scheme, baud: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Row {
    Latency(LatencyRow),
    Pto(PtoRow),
    Modbus(ModbusRow),
}

/// Expand the spec into cells. Fractional PTO points need the maximum
/// frequency first, which is simulated here.
pub fn cells(spec: &SweepSpec) -> Result<Vec<Cell>, HarnessError> {
    let mut out = Vec::new();
    for s in &spec.schemes {
        for &state in &spec.latency_states {
            out.push(Cell::Latency { scheme: s.clone(), state });
        }
        for &mix in &spec.pto_mixes {
            let mut freqs = spec.pto_freqs.clone();
            if !spec.pto_fractions.is_empty() {
                let max = max_sustainable_frequency(s, &spec.costs, mix, 2_000_000, spec.seed)?;
                freqs.extend(spec.pto_fractions.iter().map(|f| (max as f64 * f).round() as u64).filter(|&f| f > 0));
            }
            freqs.sort_unstable();
            freqs.dedup();
            for freq_hz in freqs {
                out.push(Cell::Pto { scheme: s.clone(), mix, freq_hz });
            }
        }
        for &baud in &spec.modbus_bauds {
            out.push(Cell::Modbus { scheme: s.clone(), baud });
        }
    }
    Ok(out)
}

pub fn run_cell(cell: &Cell, spec: &SweepSpec) -> Result<Row, HarnessError> {
    Ok(match cell {
        Cell::Latency { scheme, state } => {
            let s = run_latency_probe(scheme, &spec.costs, *state, spec.latency_samples)?;
            Row::Latency(LatencyRow { scheme: s.scheme, state: s.state, avg: s.avg, max: s.max, n: s.n })
        }
        Cell::Pto { scheme, mix, freq_hz } => {
            let r = run_pto(scheme, &spec.costs, *freq_hz, *mix, pto_duration(*freq_hz), spec.seed)?;
            Row::Pto(PtoRow { scheme: r.scheme, mix: r.mix, freq_hz: r.freq_hz, jitter_norm: r.jitter.jitter_norm, sustainable: r.sustainable })
        }
        Cell::Modbus { scheme, baud } => {
            let r = run_modbus_coloc(scheme, &spec.costs, *baud, spec.modbus_window, spec.seed)?;
            Row::Modbus(ModbusRow { scheme: r.scheme, baud: r.baud, fps: r.fps, sustainable: r.sustainable })
        }
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepResult {
    pub latency: Vec<LatencyRow>,
    pub pto: Vec<PtoRow>,
    pub modbus: Vec<ModbusRow>,
}

impl SweepResult {
    pub fn push(&mut self, row: Row) {
        match row {
            Row::Latency(r) => self.latency.push(r),
            Row::Pto(r) => self.pto.push(r),
            Row::Modbus(r) => self.modbus.push(r),
        }
    }

    pub fn sort(&mut self) {
        self.latency.sort_by(|a, b| (&a.scheme, a.state).cmp(&(&b.scheme, b.state)));
        self.pto.sort_by(|a, b| (&a.scheme, a.mix, a.freq_hz).cmp(&(&b.scheme, b.mix, b.freq_hz)));
        self.modbus.sort_by(|a, b| (&a.scheme, a.baud).cmp(&(&b.scheme, b.baud)));
    }

    pub fn latency_csv(&self) -> String {
        to_csv(&LATENCY_HEADER, &self.latency)
    }

    pub fn pto_csv(&self) -> String {
        to_csv(&PTO_HEADER, &self.pto)
    }

    pub fn modbus_csv(&self) -> String {
        to_csv(&MODBUS_HEADER, &self.modbus)
    }
}

/// Run every cell in order.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult, HarnessError> {
    let mut res = SweepResult::default();
    for c in cells(spec)? {
        res.push(run_cell(&c, spec)?);
    }
    res.sort();
    Ok(res)
}

/// Header line always present, even with no rows.
pub fn to_csv<T: Serialize>(header: &[&str], rows: &[T]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.serialize(r).expect("rows are flat records");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

/// Parse a table produced by [`to_csv`].
pub fn from_csv<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>, csv::Error> {
    csv::Reader::from_reader(text.as_bytes()).deserialize().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_matrix_is_header_only() {
        let r = run_sweep(&SweepSpec::empty()).unwrap();
        assert_eq!(r.latency_csv(), "scheme,state,avg,max,n\n");
        assert_eq!(r.pto_csv(), "scheme,mix,freq_hz,jitter_norm,sustainable\n");
        assert_eq!(r.modbus_csv(), "scheme,baud,fps,sustainable\n");
    }

    #[test]
    fn latency_matrix_rows_sorted_and_repeatable() {
        let mut spec = SweepSpec::empty();
        spec.schemes = ["v5", "kernel", "v1"].iter().map(|s| Scheme::parse(s).unwrap()).collect();
        spec.latency_states = TargetState::ALL.to_vec();
        spec.latency_samples = 50;
        let a = run_sweep(&spec).unwrap();
        assert_eq!(a.latency.len(), 6);
        assert_eq!(a.latency[0].scheme, "kernel");
        let csv = a.latency_csv();
        assert_eq!(csv, run_sweep(&spec).unwrap().latency_csv());
        let back: Vec<LatencyRow> = from_csv(&csv).unwrap();
        assert_eq!(back, a.latency);
    }

    #[test]
    fn shuffled_cells_merge_identically() {
        let mut spec = SweepSpec::empty();
        spec.schemes = vec![Scheme::parse("v2").unwrap(), Scheme::parse("software").unwrap()];
        spec.latency_states = TargetState::ALL.to_vec();
        spec.latency_samples = 20;
        let mut cs = cells(&spec).unwrap();
        cs.reverse();
        let mut r = SweepResult::default();
        for c in &cs {
            r.push(run_cell(c, &spec).unwrap());
        }
        r.sort();
        assert_eq!(r, run_sweep(&spec).unwrap());
    }
}
