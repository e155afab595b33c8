//! Pulse train output: a timer handler toggles a pin every half period and
//! reprograms the reload value from the pulse spec kept in process memory.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::kernel::{BudgetPolicy, KernelCosts, Scheme};
use crate::CORE_HZ;

use super::devices::{Devices, TIMER_IRQ};
use super::rig::{Rig, BG_DATA, TARGET_DATA};
use super::stats::percentile;
use super::workloads::{CHURN, PTO};
use super::HarnessError;

pub const PTO_FREQS: [u64; 6] = [10_000, 16_000, 20_000, 50_000, 100_000, 250_000];
/// Simulated cycles for one PTO cell: at least 10M and 4000 pulse periods.
pub fn pto_duration(freq_hz: u64) -> u64 {
    (8_000 * half_period(freq_hz)).max(10_000_000)
}
/// Handler budget. Unlimited, so the scheduler tick runs only when two
/// threads share the core.
pub const PTO_BUDGET: BudgetPolicy = BudgetPolicy { capacity: u32::MAX, period: 0 };

/// Which threads share the core with the handler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mix {
    /// Only the target process's thread runs.
    Active,
    /// Only an unrelated background thread runs.
    Inactive,
    /// Both, interleaved by the scheduler.
    Mixed,
}

impl Mix {
    pub const ALL: [Mix; 3] = [Mix::Active, Mix::Inactive, Mix::Mixed];

    pub fn name(self) -> &'static str {
        match self {
            Mix::Active => "active",
            Mix::Inactive => "inactive",
            Mix::Mixed => "mixed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JitterStats {
    pub n: usize,
    /// Nominal half-period in cycles.
    pub half_period: u64,
    /// Peak-to-peak deviation of edges from the fires they answer.
    pub p2p: u64,
    /// `p2p / half_period`.
    pub jitter_norm: f64,
    pub dev_min: u64,
    pub dev_p50: u64,
    pub dev_p99: u64,
    pub dev_max: u64,
}

impl JitterStats {
    pub fn from_deviations(half_period: u64, devs: &[u64]) -> Self {
        let mut s = devs.to_vec();
        s.sort_unstable();
        let min = s.first().copied().unwrap_or(0);
        let max = s.last().copied().unwrap_or(0);
        Self {
            n: s.len(),
            half_period,
            p2p: max - min,
            jitter_norm: (max - min) as f64 / half_period as f64,
            dev_min: min,
            dev_p50: percentile(&s, 50.0),
            dev_p99: percentile(&s, 99.0),
            dev_max: max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtoResult {
    pub scheme: String,
    pub mix: Mix,
    pub freq_hz: u64,
    pub jitter: JitterStats,
    pub lost: u64,
    pub sustainable: bool,
}

/// Half-period in cycles for a pulse frequency, rounded to the nearest cycle.
pub fn half_period(freq_hz: u64) -> u64 {
    (CORE_HZ + freq_hz) / (2 * freq_hz)
}

/// Each edge measured against the fire of the most recent acknowledge
/// before it. A handler killed before toggling leaves its fire unpaired.
pub fn deviations(edges: &[(u64, u32)], acks: &[(u64, u64)]) -> Vec<u64> {
    let mut out = Vec::with_capacity(edges.len());
    let mut i = 0;
    for &(edge, _) in edges {
        while i + 1 < acks.len() && acks[i + 1].1 <= edge {
            i += 1;
        }
        if let Some(&(fire, ack)) = acks.get(i) {
            if ack <= edge {
                out.push(edge - fire);
            }
        }
    }
    out
}

/// Threads run compute bursts whose lengths come from `seed`, yielding
/// after each one.
pub fn run_pto(
    scheme: &Scheme,
    costs: &KernelCosts,
    freq_hz: u64,
    mix: Mix,
    duration: u64,
    seed: u64,
) -> Result<PtoResult, HarnessError> {
    if freq_hz == 0 || half_period(freq_hz) < 2 {
        return Err(HarnessError::Invalid(format!("frequency {freq_hz} Hz outside timer range")));
    }
    let mut r = run_pto_half_period(scheme, costs, half_period(freq_hz), mix, duration, seed)?;
    r.freq_hz = freq_hz;
    Ok(r)
}

/// [`run_pto`] with the half-period given in cycles.
pub fn run_pto_half_period(
    scheme: &Scheme,
    costs: &KernelCosts,
    h: u64,
    mix: Mix,
    duration: u64,
    seed: u64,
) -> Result<PtoResult, HarnessError> {
    let freq_hz = CORE_HZ / (2 * h.max(1));
    let mut rig = Rig::new(scheme.clone(), *costs, Devices::new(h as u32, 0, 0), PTO, 1 << TIMER_IRQ, CHURN, &[])?;
    match mix {
        Mix::Active => {
            rig.spawn_target();
        }
        Mix::Inactive => {
            rig.spawn_background();
        }
        Mix::Mixed => {
            rig.spawn_target();
            rig.spawn_background();
        }
    }
    rig.poke(TARGET_DATA.start + 4, h as u32);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rig.poke(TARGET_DATA.start + 16, rng.gen_range(1..=u32::MAX));
    rig.poke(BG_DATA.start + 16, rng.gen_range(1..=u32::MAX));
    let entry = rig.target_sym("handler");
    let hd = rig.sys.int_reg(rig.target, TIMER_IRQ, entry, PTO_BUDGET)?;
    rig.sys.int_ena(rig.target, hd)?;
    rig.sys.start();
    let now = rig.cycle();
    rig.devices_mut().timer.start(now);
    rig.sys.run_until(now + duration)?;

    let dev = rig.devices();
    let devs = deviations(&dev.pin.edges, &dev.timer.acks);
    let jitter = JitterStats::from_deviations(h, &devs);
    let lost = dev.timer.lost;
    // every fire but possibly the last must have produced its edge
    let answered = devs.len() + 1 >= dev.timer.acks.len();
    let sustainable = lost == 0 && answered && jitter.dev_max < h && !devs.is_empty();
    Ok(PtoResult { scheme: scheme.label(), mix, freq_hz, jitter, lost, sustainable })
}

/// Highest sustainable pulse frequency, by bisection over the half-period
/// (sustainability is monotone in it). Zero if even 1 kHz fails.
pub fn max_sustainable_frequency(scheme: &Scheme, costs: &KernelCosts, mix: Mix, duration: u64, seed: u64) -> Result<u64, HarnessError> {
    let ok = |h: u64| run_pto_half_period(scheme, costs, h, mix, duration, seed).map(|r| r.sustainable);
    let (mut lo, mut hi) = (2u64, CORE_HZ / 2_000);
    if !ok(hi)? {
        return Ok(0);
    }
    if ok(lo)? {
        return Ok(CORE_HZ / (2 * lo));
    }
    // invariant: lo fails, hi passes
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if ok(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(CORE_HZ / (2 * hi))
}
