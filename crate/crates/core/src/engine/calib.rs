//! Segment cycle constants and the solver that derives them.
//!
//! The published figures are six entry totals (kernel-level base plus V1 to
//! V5) and the V1 total with the kernel PMP set spilled instead of shadowed.
//! They do not give per-segment costs. [`solve`] searches a box of small
//! integer constants, composes every anchor with the real schedule composer
//! and keeps the points where all seven totals match.
//!
//! Two structural facts fall out of the search. With a 32-bit data path no
//! point matches, because a 33-word spill alone then exceeds the V1-V2 gap;
//! ports must move two words per beat. And a PMP record of `2K + 1` words
//! only fits for `K = 4`: the V4-to-V3 and V1-spill-to-V1 gaps both equal
//! the record's transfer cost, which pins it at 5 TCM beats.

use serde::{Deserialize, Serialize};

use crate::isa::CoreTiming;
use crate::memory::{BusTiming, MemoryMap, MemorySystem, Region, RegionKind, SRAM_BASE, TCM_STACK_BASE, TCM_TABLE_BASE};

use super::schedule::{compose_entry, compose_kernel_entry, CtxSave, EntryPlan, EntrySchedule, IidSource, IID_RECORD_WORDS};
use super::{IidMode, KernelPmp, StackPort, TablePort, Variant, VariantConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Calibration {
    /// Interrupt acknowledge; CAM matching happens inside it.
    pub ack: u64,
    /// Completion handshake once all parallel entry actions are done.
    pub finish: u64,
    /// Pipeline redirect to the handler or vector.
    pub redirect: u64,
    /// Cycles the context engine holds its port before streaming a frame.
    pub spill_setup: u64,
    pub bus: BusTiming,
    pub core: CoreTiming,
}

impl Default for Calibration {
    fn default() -> Self {
        Self { ack: 1, finish: 1, redirect: 4, spill_setup: 3, bus: BusTiming::default(), core: CoreTiming::default() }
    }
}

impl Calibration {
    /// Kernel-level interrupt or exception entry latency.
    pub fn kernel_entry(&self) -> u64 {
        self.ack + self.redirect
    }
}

/// One reference latency the calibration must reproduce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Anchor {
    pub name: &'static str,
    pub expected: u64,
    /// `None` is the kernel-level base path.
    pub variant: Option<Variant>,
    pub kernel_pmp: KernelPmp,
}

pub const ANCHORS: [Anchor; 7] = [
    Anchor { name: "base", expected: 5, variant: None, kernel_pmp: KernelPmp::Shadow },
    Anchor { name: "v1", expected: 38, variant: Some(Variant::V1), kernel_pmp: KernelPmp::Shadow },
    Anchor { name: "v2", expected: 29, variant: Some(Variant::V2), kernel_pmp: KernelPmp::Shadow },
    Anchor { name: "v3", expected: 17, variant: Some(Variant::V3), kernel_pmp: KernelPmp::Shadow },
    Anchor { name: "v4", expected: 14, variant: Some(Variant::V4), kernel_pmp: KernelPmp::Shadow },
    Anchor { name: "v5", expected: 11, variant: Some(Variant::V5), kernel_pmp: KernelPmp::Shadow },
    Anchor { name: "v1-spill", expected: 44, variant: Some(Variant::V1), kernel_pmp: KernelPmp::Spill },
];

/// Small memory system with every port present, for idle-machine probes.
fn probe_memory(bus: BusTiming) -> MemorySystem {
    let map = MemoryMap::new(
        vec![
            Region::new("sram", SRAM_BASE, 0x4000, RegionKind::Sram),
            Region::new("tcm_stack", TCM_STACK_BASE, 0x1000, RegionKind::TcmStack),
            Region::new("tcm_table", TCM_TABLE_BASE, 0x1000, RegionKind::TcmTable),
        ],
        true,
        true,
    )
    .expect("probe map is valid");
    MemorySystem::new(map, bus)
}

/// Entry total for `config` on an idle machine, preempting a thread.
pub fn idle_entry_total(config: &VariantConfig) -> u64 {
    idle_entry_schedule(config).total
}

/// The full entry schedule behind [`idle_entry_total`], starting at cycle 0.
pub fn idle_entry_schedule(config: &VariantConfig) -> EntrySchedule {
    let cal = &config.calibration;
    let mut mem = probe_memory(cal.bus);
    let pmp_words = 2 * config.pmp_entries as u32 + 1;
    let table_base = match config.table_port {
        TablePort::MainSram => SRAM_BASE + 0x1000,
        TablePort::TcmTable => TCM_TABLE_BASE,
    };
    let stack_top = match config.stack_port {
        StackPort::MainSram => SRAM_BASE + 0x4000,
        StackPort::TcmStack => TCM_STACK_BASE + 0x1000,
    };
    let ctx = if config.extra_banks > 0 { CtxSave::Bank } else { CtxSave::Spill(stack_top - 4 * super::FRAME_WORDS) };
    let kernel_pmp_spill = (config.kernel_pmp == KernelPmp::Spill).then_some(stack_top - 0x200);
    let plan = EntryPlan {
        start: 0,
        iid: match config.iid {
            IidMode::Cam => IidSource::Cam,
            _ => IidSource::Table(SRAM_BASE + 7 * 4 * IID_RECORD_WORDS),
        },
        writeback_budget: None,
        kernel_pmp_spill,
        ctx,
        pmp_ptr: table_base,
        budget_ptr: SRAM_BASE + 0x2000,
        pmp_words,
    };
    compose_entry(&mut mem, cal, &plan).expect("probe addresses are mapped")
}

/// Actual total for an anchor under `cal` with `k` PMP entries per domain.
pub fn anchor_total(anchor: &Anchor, cal: &Calibration, k: usize) -> u64 {
    match anchor.variant {
        None => compose_kernel_entry(cal, 0).total,
        Some(v) => {
            let mut c = VariantConfig::preset(v).with_kernel_pmp(anchor.kernel_pmp);
            c.pmp_entries = k;
            c.calibration = *cal;
            idle_entry_total(&c)
        }
    }
}

/// `(anchor, actual)` for every anchor.
pub fn check(cal: &Calibration, k: usize) -> Vec<(Anchor, u64)> {
    ANCHORS.iter().map(|a| (*a, anchor_total(a, cal, k))).collect()
}

pub fn satisfies(cal: &Calibration, k: usize) -> bool {
    ANCHORS.iter().all(|a| anchor_total(a, cal, k) == a.expected)
}

/// Inclusive search ranges for [`solve`].
#[derive(Debug, Clone)]
pub struct SearchBox {
    pub ack: Vec<u64>,
    pub finish: Vec<u64>,
    pub redirect: Vec<u64>,
    pub spill_setup: Vec<u64>,
    pub main_addr: Vec<u64>,
    pub sram_beat: Vec<u64>,
    pub tcm_beat: Vec<u64>,
    pub words_per_beat: Vec<u32>,
}

impl Default for SearchBox {
    fn default() -> Self {
        Self {
            ack: (0..=2).collect(),
            finish: (0..=2).collect(),
            redirect: (1..=6).collect(),
            spill_setup: (0..=5).collect(),
            main_addr: (0..=2).collect(),
            sram_beat: (1..=2).collect(),
            tcm_beat: (1..=2).collect(),
            words_per_beat: vec![1, 2],
        }
    }
}

/// Every calibration in `bounds` that reproduces all anchors with `k` PMP
/// entries. Constants not searched keep their default values.
pub fn solve(bounds: &SearchBox, k: usize) -> Vec<Calibration> {
    let mut out = Vec::new();
    let base = Calibration::default();
    for &ack in &bounds.ack {
        for &redirect in &bounds.redirect {
            // The base anchor depends on these two alone.
            if ack + redirect != ANCHORS[0].expected {
                continue;
            }
            for &finish in &bounds.finish {
                for &spill_setup in &bounds.spill_setup {
                    for &main_addr in &bounds.main_addr {
                        for &sram_beat in &bounds.sram_beat {
                            for &tcm_beat in &bounds.tcm_beat {
                                for &wpb in &bounds.words_per_beat {
                                    let bus = BusTiming {
                                        main_addr_cycles: main_addr,
                                        sram_beat_cycles: sram_beat,
                                        tcm_beat_cycles: tcm_beat,
                                        words_per_beat: wpb,
                                        ..base.bus
                                    };
                                    let cal = Calibration { ack, finish, redirect, spill_setup, bus, core: base.core };
                                    if satisfies(&cal, k) {
                                        out.push(cal);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_calibration_hits_every_anchor() {
        for (a, actual) in check(&Calibration::default(), 4) {
            assert_eq!(actual, a.expected, "{}", a.name);
        }
    }

    #[test]
    fn every_unit_perturbation_breaks_an_anchor() {
        let base = Calibration::default();
        let mut variants: Vec<(&str, Calibration)> = Vec::new();
        let mut c = base;
        c.ack += 1;
        variants.push(("ack", c));
        let mut c = base;
        c.finish += 1;
        variants.push(("finish", c));
        let mut c = base;
        c.redirect += 1;
        variants.push(("redirect", c));
        let mut c = base;
        c.spill_setup += 1;
        variants.push(("spill_setup", c));
        let mut c = base;
        c.bus.main_addr_cycles += 1;
        variants.push(("main_addr", c));
        let mut c = base;
        c.bus.sram_beat_cycles += 1;
        variants.push(("sram_beat", c));
        let mut c = base;
        c.bus.tcm_beat_cycles += 1;
        variants.push(("tcm_beat", c));
        for (name, cal) in variants {
            assert!(!satisfies(&cal, 4), "perturbing {name} kept every anchor");
        }
    }

    #[test]
    fn shipped_point_is_in_the_solution_set() {
        let sols = solve(&SearchBox::default(), 4);
        assert!(sols.contains(&Calibration::default()));
        assert!(sols.iter().all(|c| c.bus.words_per_beat == 2));
    }

    #[test]
    fn eight_entry_records_have_no_solution() {
        assert!(solve(&SearchBox::default(), 8).is_empty());
    }
}
