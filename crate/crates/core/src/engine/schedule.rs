//! Composition of entry and return timelines.
//!
//! Entry runs acknowledge, then the IID lookup, then in parallel the PMP
//! load, the budget load and the context save (plus the budget write-back of
//! a preempted handler and the kernel PMP spill when configured), then a
//! finish handshake and the pipeline redirect. Parallel actions that share a
//! port are serialized by the memory system's arbiter.

use std::fmt;

use crate::memory::{BusFault, MemorySystem, PortId, PortRequest, Requester};
use crate::trace::TraceRecord;

use super::calib::Calibration;
use super::context::FRAME_WORDS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Ack,
    IidLookup,
    BudgetWriteBack,
    KernelPmpSpill,
    CtxSave,
    PmpLoad,
    BudgetLoad,
    Finish,
    Redirect,
    CtxRestore,
    KernelPmpRestore,
    PmpRestore,
    BudgetReload,
}

impl Action {
    pub fn name(self) -> &'static str {
        match self {
            Action::Ack => "ack",
            Action::IidLookup => "iid_lookup",
            Action::BudgetWriteBack => "budget_writeback",
            Action::KernelPmpSpill => "kernel_pmp_spill",
            Action::CtxSave => "ctx_save",
            Action::PmpLoad => "pmp_load",
            Action::BudgetLoad => "budget_load",
            Action::Finish => "finish",
            Action::Redirect => "redirect",
            Action::CtxRestore => "ctx_restore",
            Action::KernelPmpRestore => "kernel_pmp_restore",
            Action::PmpRestore => "pmp_restore",
            Action::BudgetReload => "budget_reload",
        }
    }

    /// Hardware unit performing the action, for traces.
    pub fn unit(self) -> &'static str {
        match self {
            Action::Ack | Action::Finish => "ic",
            Action::IidLookup => "iidu",
            Action::BudgetWriteBack | Action::BudgetLoad | Action::BudgetReload => "budget",
            Action::PmpLoad | Action::PmpRestore | Action::KernelPmpSpill | Action::KernelPmpRestore => "pmp",
            Action::CtxSave | Action::CtxRestore => "ctx",
            Action::Redirect => "pipeline",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub action: Action,
    pub start: u64,
    pub end: u64,
    pub port: Option<PortId>,
    /// Cycles spent waiting for the port before the transfer began.
    pub stall: u64,
}

impl Segment {
    pub fn len(&self) -> u64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EntrySchedule {
    pub start: u64,
    pub segments: Vec<Segment>,
    pub total: u64,
}

impl EntrySchedule {
    pub fn end(&self) -> u64 {
        self.start + self.total
    }

    pub fn segment(&self, action: Action) -> Option<&Segment> {
        self.segments.iter().find(|s| s.action == action)
    }

    pub fn total_stall(&self) -> u64 {
        self.segments.iter().map(|s| s.stall).sum()
    }

    /// One trace record per segment, stamped at the segment start.
    pub fn records(&self, what: &str) -> Vec<TraceRecord> {
        self.segments
            .iter()
            .map(|seg| TraceRecord {
                cycle: seg.start,
                unit: seg.action.unit(),
                action: seg.action.name().to_string(),
                port: seg.port.map_or("-", |p| p.name()),
                detail: format!("{what} end={} stall={}", seg.end, seg.stall),
            })
            .collect()
    }
}

impl fmt::Display for EntrySchedule {
    /// Text Gantt chart, one row per segment, cycles relative to the start.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.segments {
            let a = s.start - self.start;
            let b = s.end - self.start;
            let bar: String = (0..self.total).map(|c| if c >= a && c < b { '#' } else { '.' }).collect();
            let port = s.port.map(|p| p.name()).unwrap_or("-");
            writeln!(f, "{:<18} {:<9} {:>3}->{:<3} {}", s.action.name(), port, a, b, bar)?;
        }
        write!(f, "total {}", self.total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IidSource {
    /// Combinational CAM match inside the acknowledge cycle.
    Cam,
    /// Table record read at this address.
    Table(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtxSave {
    Bank,
    /// Frame written downward from the hardware stack pointer; the address
    /// is the frame base.
    Spill(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EntryPlan {
    pub start: u64,
    pub iid: IidSource,
    /// Budget entry of a preempted handler whose remaining time must be
    /// written back first.
    pub writeback_budget: Option<u32>,
    /// Stack address for the kernel-managed PMP set when it is spilled.
    pub kernel_pmp_spill: Option<u32>,
    pub ctx: CtxSave,
    pub pmp_ptr: u32,
    pub budget_ptr: u32,
    pub pmp_words: u32,
}

pub const IID_RECORD_WORDS: u32 = 4;

/// Build the entry timeline, reserving the ports it uses.
pub fn compose_entry(mem: &mut MemorySystem, cal: &Calibration, plan: &EntryPlan) -> Result<EntrySchedule, BusFault> {
    let t0 = plan.start;
    let mut segs = vec![Segment { action: Action::Ack, start: t0, end: t0 + cal.ack, port: None, stall: 0 }];
    let mut t = t0 + cal.ack;
    if let IidSource::Table(addr) = plan.iid {
        let req = PortRequest::burst(Requester::TableLoader, addr, IID_RECORD_WORDS, false, t);
        let g = mem.schedule(&[req])?[0];
        segs.push(Segment { action: Action::IidLookup, start: g.start, end: g.end, port: Some(g.port), stall: g.start - t });
        t = g.end;
    }

    let mut reqs: Vec<(Action, PortRequest)> = Vec::new();
    if let Some(b) = plan.writeback_budget {
        reqs.push((Action::BudgetWriteBack, PortRequest::single(Requester::TableLoader, b, 4, true, t)));
    }
    if let Some(addr) = plan.kernel_pmp_spill {
        reqs.push((Action::KernelPmpSpill, PortRequest::burst(Requester::CtxEngine, addr, plan.pmp_words, true, t)));
    }
    match plan.ctx {
        CtxSave::Bank => segs.push(Segment { action: Action::CtxSave, start: t, end: t, port: None, stall: 0 }),
        CtxSave::Spill(addr) => reqs.push((
            Action::CtxSave,
            PortRequest::burst(Requester::CtxEngine, addr, FRAME_WORDS, true, t).with_hold(cal.spill_setup),
        )),
    }
    reqs.push((Action::PmpLoad, PortRequest::burst(Requester::TableLoader, plan.pmp_ptr, plan.pmp_words, false, t)));
    reqs.push((Action::BudgetLoad, PortRequest::single(Requester::TableLoader, plan.budget_ptr, 4, false, t)));

    let done = run_parallel(mem, &mut segs, &reqs, t)?;
    segs.push(Segment { action: Action::Finish, start: done, end: done + cal.finish, port: None, stall: 0 });
    let r = done + cal.finish;
    segs.push(Segment { action: Action::Redirect, start: r, end: r + cal.redirect, port: None, stall: 0 });
    Ok(EntrySchedule { start: t0, total: r + cal.redirect - t0, segments: segs })
}

/// Issue `reqs` together and record their segments; returns when the last
/// one completes (or `t` if there are none).
fn run_parallel(
    mem: &mut MemorySystem,
    segs: &mut Vec<Segment>,
    reqs: &[(Action, PortRequest)],
    t: u64,
) -> Result<u64, BusFault> {
    let plain: Vec<PortRequest> = reqs.iter().map(|(_, r)| *r).collect();
    let grants = mem.schedule(&plain)?;
    let mut done = t;
    for ((action, req), g) in reqs.iter().zip(&grants) {
        segs.push(Segment { action: *action, start: g.start, end: g.end, port: Some(g.port), stall: g.start - req.issue_cycle });
        done = done.max(g.end);
    }
    segs.sort_by_key(|s| (s.start, s.action));
    Ok(done)
}

/// Kernel-level trap entry: acknowledge and redirect to the vector.
pub fn compose_kernel_entry(cal: &Calibration, start: u64) -> EntrySchedule {
    let a = start + cal.ack;
    EntrySchedule {
        start,
        total: cal.ack + cal.redirect,
        segments: vec![
            Segment { action: Action::Ack, start, end: a, port: None, stall: 0 },
            Segment { action: Action::Redirect, start: a, end: a + cal.redirect, port: None, stall: 0 },
        ],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtxRestore {
    Bank,
    Unspill(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmpRestore {
    /// Kernel-managed set comes back from the shadow bank.
    Shadow,
    /// Kernel-managed set comes back from the hardware stack.
    Unspill(u32),
    /// A preempted handler resumes: its PMP record and budget are reloaded.
    Reload { pmp_ptr: u32, budget_ptr: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReturnPlan {
    pub start: u64,
    pub budget_writeback: u32,
    pub ctx: CtxRestore,
    pub pmp: PmpRestore,
    pub pmp_words: u32,
}

/// Return timeline: write-back, context restore and PMP restore in
/// parallel, then the redirect to the resumed context.
pub fn compose_return(mem: &mut MemorySystem, cal: &Calibration, plan: &ReturnPlan) -> Result<EntrySchedule, BusFault> {
    let t = plan.start;
    let mut segs = Vec::new();
    let mut reqs = vec![(Action::BudgetWriteBack, PortRequest::single(Requester::TableLoader, plan.budget_writeback, 4, true, t))];
    match plan.ctx {
        CtxRestore::Bank => segs.push(Segment { action: Action::CtxRestore, start: t, end: t, port: None, stall: 0 }),
        CtxRestore::Unspill(addr) => reqs.push((
            Action::CtxRestore,
            PortRequest::burst(Requester::CtxEngine, addr, FRAME_WORDS, false, t).with_hold(cal.spill_setup),
        )),
    }
    match plan.pmp {
        PmpRestore::Shadow => segs.push(Segment { action: Action::PmpRestore, start: t, end: t, port: None, stall: 0 }),
        PmpRestore::Unspill(addr) => reqs.push((
            Action::KernelPmpRestore,
            PortRequest::burst(Requester::CtxEngine, addr, plan.pmp_words, false, t),
        )),
        PmpRestore::Reload { pmp_ptr, budget_ptr } => {
            reqs.push((Action::PmpRestore, PortRequest::burst(Requester::TableLoader, pmp_ptr, plan.pmp_words, false, t)));
            reqs.push((Action::BudgetReload, PortRequest::single(Requester::TableLoader, budget_ptr, 4, false, t)));
        }
    }
    let done = run_parallel(mem, &mut segs, &reqs, t)?;
    segs.push(Segment { action: Action::Redirect, start: done, end: done + cal.redirect, port: None, stall: 0 });
    Ok(EntrySchedule { start: t, total: done + cal.redirect - t, segments: segs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{BusTiming, MemoryMap, SRAM_BASE, TCM_STACK_BASE, TCM_TABLE_BASE};

    fn mem() -> MemorySystem {
        MemorySystem::new(MemoryMap::standard(true, true), BusTiming::default())
    }

    fn plan(iid: IidSource, ctx: CtxSave, table: u32) -> EntryPlan {
        EntryPlan {
            start: 100,
            iid,
            writeback_budget: None,
            kernel_pmp_spill: None,
            ctx,
            pmp_ptr: table,
            budget_ptr: SRAM_BASE + 0x800,
            pmp_words: 9,
        }
    }

    #[test]
    fn v1_segments_serialize_on_sram() {
        let mut m = mem();
        let p = plan(IidSource::Table(SRAM_BASE), CtxSave::Spill(SRAM_BASE + 0x1000), SRAM_BASE + 0x400);
        let s = compose_entry(&mut m, &Calibration::default(), &p).unwrap();
        assert_eq!(s.total, 38);
        let ctx = s.segment(Action::CtxSave).unwrap();
        let pmp = s.segment(Action::PmpLoad).unwrap();
        let bud = s.segment(Action::BudgetLoad).unwrap();
        assert!(ctx.end <= pmp.start && pmp.end <= bud.start);
        assert!(pmp.stall > 0);
    }

    #[test]
    fn v2_stacking_overlaps_table_loads() {
        let mut m = mem();
        let p = plan(IidSource::Table(SRAM_BASE), CtxSave::Spill(TCM_STACK_BASE + 0x100), SRAM_BASE + 0x400);
        let s = compose_entry(&mut m, &Calibration::default(), &p).unwrap();
        assert_eq!(s.total, 29);
        let ctx = s.segment(Action::CtxSave).unwrap();
        let pmp = s.segment(Action::PmpLoad).unwrap();
        assert_eq!(ctx.start, pmp.start);
        assert_eq!(ctx.stall + pmp.stall, 0);
    }

    #[test]
    fn v5_has_no_iid_segment() {
        let mut m = mem();
        let p = plan(IidSource::Cam, CtxSave::Bank, TCM_TABLE_BASE);
        let s = compose_entry(&mut m, &Calibration::default(), &p).unwrap();
        assert_eq!(s.total, 11);
        assert!(s.segment(Action::IidLookup).is_none());
    }

    #[test]
    fn kernel_entry_is_five() {
        assert_eq!(compose_kernel_entry(&Calibration::default(), 0).total, 5);
    }

    #[test]
    fn busy_port_only_adds_cycles() {
        let p = plan(IidSource::Table(SRAM_BASE), CtxSave::Spill(SRAM_BASE + 0x1000), SRAM_BASE + 0x400);
        let idle = compose_entry(&mut mem(), &Calibration::default(), &p).unwrap().total;
        let mut m = mem();
        let other = PortRequest::burst(Requester::CoreData, SRAM_BASE + 0x2000, 4, true, 100);
        m.schedule(&[other]).unwrap();
        let busy = compose_entry(&mut m, &Calibration::default(), &p).unwrap().total;
        assert!(busy > idle);
    }

    #[test]
    fn returns() {
        let cal = Calibration::default();
        let v5 = ReturnPlan {
            start: 0,
            budget_writeback: SRAM_BASE + 0x800,
            ctx: CtxRestore::Bank,
            pmp: PmpRestore::Shadow,
            pmp_words: 9,
        };
        assert_eq!(compose_return(&mut mem(), &cal, &v5).unwrap().total, 6);
        let v1 = ReturnPlan { ctx: CtxRestore::Unspill(SRAM_BASE + 0x1000), ..v5 };
        assert_eq!(compose_return(&mut mem(), &cal, &v1).unwrap().total, 27);
    }
}
