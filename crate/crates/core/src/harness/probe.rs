//! Interrupt latency probe.
//!
//! A reload timer fires every [`PROBE_PERIOD`] cycles. The handler's first
//! data access reads the down-counter, so the elapsed cycles since the fire
//! are `PROBE_PERIOD - count`. Subtracting [`PROBE_OFFSET`] (pipeline refill
//! plus the `lui` that forms the device address) leaves the cycles from the
//! interrupt to the first handler instruction reaching execute.

use serde::{Deserialize, Serialize};

use crate::kernel::{BudgetPolicy, KernelCosts, Scheme};
use crate::trace::{Trace, TraceRecord};

use super::devices::{Devices, TIMER_IRQ};
use super::rig::Rig;
use super::stats::{mean, percentile};
use super::workloads::PROBE;
use super::HarnessError;

pub const PROBE_PERIOD: u32 = 4000;
pub const PROBE_OFFSET: u64 = 3;

/// Whether the process owning the handler is the one on the core.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetState {
    Active,
    Inactive,
}

impl TargetState {
    pub const ALL: [TargetState; 2] = [TargetState::Active, TargetState::Inactive];

    pub fn name(self) -> &'static str {
        match self {
            TargetState::Active => "active",
            TargetState::Inactive => "inactive",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "active" => Some(TargetState::Active),
            "inactive" => Some(TargetState::Inactive),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub scheme: String,
    pub state: TargetState,
    pub n: usize,
    pub avg: f64,
    pub min: u64,
    pub max: u64,
    pub p50: u64,
    pub p99: u64,
}

impl LatencyStats {
    pub fn from_samples(scheme: String, state: TargetState, samples: &[u64]) -> Self {
        let mut s = samples.to_vec();
        s.sort_unstable();
        Self {
            scheme,
            state,
            n: s.len(),
            avg: mean(&s),
            min: s.first().copied().unwrap_or(0),
            max: s.last().copied().unwrap_or(0),
            p50: percentile(&s, 50.0),
            p99: percentile(&s, 99.0),
        }
    }
}

/// Raw latency samples, one per timer fire.
pub fn probe_samples(scheme: &Scheme, costs: &KernelCosts, state: TargetState, n: usize) -> Result<Vec<u64>, HarnessError> {
    probe_run(scheme, costs, state, n, false).map(|r| r.0)
}

/// Samples plus the machine trace of the whole run.
pub fn probe_trace(
    scheme: &Scheme,
    costs: &KernelCosts,
    state: TargetState,
    n: usize,
) -> Result<(Vec<u64>, Vec<TraceRecord>), HarnessError> {
    probe_run(scheme, costs, state, n, true)
}

fn probe_run(
    scheme: &Scheme,
    costs: &KernelCosts,
    state: TargetState,
    n: usize,
    trace: bool,
) -> Result<(Vec<u64>, Vec<TraceRecord>), HarnessError> {
    if n == 0 {
        return Err(HarnessError::Invalid("sample count must be positive".into()));
    }
    let mut rig = Rig::new(scheme.clone(), *costs, Devices::new(PROBE_PERIOD, 0, 0), PROBE, 1 << TIMER_IRQ, PROBE, &[])?;
    match state {
        TargetState::Active => rig.spawn_target(),
        TargetState::Inactive => rig.spawn_background(),
    };
    let entry = rig.target_sym("handler");
    let h = rig.sys.int_reg(rig.target, TIMER_IRQ, entry, BudgetPolicy::unlimited())?;
    rig.sys.int_ena(rig.target, h)?;
    if trace {
        rig.sys.m.trace = Trace::enabled();
    }
    rig.sys.start();
    let now = rig.cycle();
    rig.devices_mut().timer.start(now);
    let limit = now + (n as u64 + 2) * PROBE_PERIOD as u64;
    while rig.devices().timer.count_reads.len() < n {
        rig.sys.step()?;
        if rig.devices().timer.lost > 0 {
            return Err(HarnessError::Overrun { cycle: rig.cycle() });
        }
        if rig.cycle() > limit {
            return Err(HarnessError::Stalled { cycles: rig.cycle() - now });
        }
    }
    if trace {
        // finish the last handler so the trace shows its return
        while rig.sys.m.handler_depth() > 0 && rig.cycle() <= limit {
            rig.sys.step()?;
        }
    }
    let samples = rig
        .devices()
        .timer
        .count_reads
        .iter()
        .map(|&(_, count)| (PROBE_PERIOD - count) as u64 - PROBE_OFFSET)
        .collect();
    Ok((samples, rig.sys.m.trace.take()))
}

pub fn run_latency_probe(scheme: &Scheme, costs: &KernelCosts, state: TargetState, n: usize) -> Result<LatencyStats, HarnessError> {
    let samples = probe_samples(scheme, costs, state, n)?;
    Ok(LatencyStats::from_samples(scheme.label(), state, &samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Variant;

    #[test]
    fn v5_and_v1_match_schedule_totals() {
        let c = KernelCosts::default();
        for (v, want) in [(Variant::V5, 14), (Variant::V1, 41)] {
            for st in TargetState::ALL {
                let s = probe_samples(&Scheme::variant(v), &c, st, 20).unwrap();
                assert!(s.iter().all(|&x| x == want), "{v:?} {st:?}: {s:?}");
            }
        }
    }
}
