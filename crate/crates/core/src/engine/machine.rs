//! The core plus the extension hardware: interrupt selection, user-level
//! entry and return, budget countdown, forced return and the machine timer.
//!
//! Kernel software is either real machine-mode code ([`TrapMode::Native`])
//! or modelled by the host as [`KernelBlock`]s of abstract cycles
//! ([`TrapMode::Hosted`]). User-level interrupts preempt both at cycle
//! granularity; kernel blocks advance event to event so no arrival is missed.

use thiserror::Error;

use crate::isa::csr::{MSTATUS_MIE, MSTATUS_MPIE, MSTATUS_MPP, CAUSE_EXCEPTION_BASE, CAUSE_SPATIAL, CAUSE_TEMPORAL};
use crate::isa::exec::cause;
use crate::isa::{encode, step, CsrFile, CycleReport, MachineState, Mode, StepEvent};
use crate::memory::{BusFault, MemoryMap, MemorySystem};
use crate::protection::{PmpSet, PmpUnit, ShadowDirection};
use crate::trace::Trace;

use super::iid::{cam_lookup, table_lookup, table_record_addr, vector_addr, IidEntry, IidLookup};
use super::schedule::{
    compose_entry, compose_kernel_entry, compose_return, CtxRestore, CtxSave, EntryPlan, EntrySchedule, IidSource,
    PmpRestore, ReturnPlan,
};
use super::{BankSet, Calibration, ContextFrame, IidMode, KernelPmp, VariantConfig, DEFAULT_PMP_ENTRIES, FRAME_WORDS};

pub const IRQ_LINES: u32 = 32;
/// Line raised while `mtime >= mtimecmp`. Always kernel-level.
pub const IRQ_MTIMER: u32 = 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrapMode {
    /// Traps vector to `mtvec` and run machine-mode code.
    Native,
    /// Traps stop and return [`MachineEvent::Trap`] to the host kernel.
    Hosted,
}

/// What a user-level handler interrupted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preempted {
    Thread,
    Kernel,
    Handler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ForcedCause {
    /// PMP violation.
    Spatial,
    /// Budget ran out.
    Temporal,
    /// Any other exception, by its standard cause code.
    Exception(u32),
}

impl ForcedCause {
    /// Value written to `muicause`.
    pub fn code(self) -> u32 {
        match self {
            ForcedCause::Spatial => CAUSE_SPATIAL,
            ForcedCause::Temporal => CAUSE_TEMPORAL,
            ForcedCause::Exception(c) => CAUSE_EXCEPTION_BASE + c,
        }
    }
}

/// A stretch of modelled kernel execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelBlock {
    pub remaining: u64,
    /// Interrupts of every kind are held off (critical section).
    pub masked: bool,
    /// Kernel-level interrupts may nest on top of this block.
    pub kernel_irq_ok: bool,
    /// Host-chosen identifier reported when the block finishes.
    pub tag: u64,
}

impl KernelBlock {
    pub fn new(cycles: u64, tag: u64) -> Self {
        Self { remaining: cycles, masked: false, kernel_irq_ok: false, tag }
    }

    pub fn masked(mut self) -> Self {
        self.masked = true;
        self
    }

    pub fn preemptible(mut self) -> Self {
        self.kernel_irq_ok = true;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SavedCtx {
    Bank(usize),
    Spill(u32),
}

#[derive(Debug, Clone)]
struct HandlerFrame {
    line: u32,
    entry: IidEntry,
    prio: u8,
    remaining: u64,
    preempted: Preempted,
    saved: SavedCtx,
    kernel_pmp_spill: Option<u32>,
    /// Replenish that arrived while this handler was counting down; it
    /// replaces the written-back value on return.
    pending_replenish: Option<u32>,
    entered_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MachineEvent {
    Retired(CycleReport),
    UintrEntered { line: u32, preempted: Preempted, schedule: EntrySchedule },
    UintrReturned { line: u32, forced: Option<ForcedCause>, schedule: EntrySchedule, ran: u64 },
    /// Kernel-level trap taken. For interrupts `cause` has bit 31 set.
    Trap { cause: u32, tval: u32, epc: u32 },
    Mret,
    KernelProgress(u64),
    KernelBlockDone { tag: u64 },
    /// The core slept in `wfi` for this many cycles.
    Idle(u64),
    /// `ebreak` outside a handler with [`Machine::halt_on_ebreak`] set.
    Halted,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("user-level interrupt stack overflow: frame at {addr:#x} is below {limit:#x}")]
    StackOverflow { addr: u32, limit: u32 },
    #[error("bus fault during interrupt entry or return: {0}")]
    Bus(#[from] BusFault),
    #[error("core waits in wfi with no future interrupt source")]
    Deadlock,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MachineStats {
    pub instructions: u64,
    pub uintr_entries: u64,
    pub forced_spatial: u64,
    pub forced_temporal: u64,
    pub forced_exception: u64,
    pub traps: u64,
}

pub struct Machine {
    pub state: MachineState,
    pub mem: MemorySystem,
    pub pmp: PmpUnit,
    /// `None` is the baseline core built without the extension.
    pub config: Option<VariantConfig>,
    pub cal: Calibration,
    pub trap_mode: TrapMode,
    /// Hardware priority per line; user-level delivery needs it to exceed
    /// the running context's (threads and the kernel are 0).
    pub prio: [u8; IRQ_LINES as usize],
    /// Kernel-level enable mask.
    pub irq_enable: u32,
    /// Lowest address the hardware stack may grow to.
    pub uistk_limit: u32,
    pub halt_on_ebreak: bool,
    pub trace: Trace,
    pub stats: MachineStats,
    banks: BankSet,
    frames: Vec<HandlerFrame>,
    kernel_blocks: Vec<KernelBlock>,
    paused_since: Option<u64>,
    paused_total: u64,
}

/// Memory system matching the ports a configuration needs.
pub fn memory_for(config: Option<&VariantConfig>) -> MemorySystem {
    let (stack, table) = config.map_or((false, false), |c| (c.uses_tcm_stack(), c.uses_tcm_table()));
    let bus = config.map_or_else(Calibration::default, |c| c.calibration).bus;
    MemorySystem::new(MemoryMap::standard(stack, table), bus)
}

impl Machine {
    pub fn new(config: Option<VariantConfig>, mem: MemorySystem, reset_pc: u32, trap_mode: TrapMode) -> Self {
        let csrs = match &config {
            Some(c) => CsrFile::with_extension(if c.iid == IidMode::Cam { c.cam_entries } else { 0 }),
            None => CsrFile::baseline(),
        };
        let cal = config.as_ref().map_or_else(Calibration::default, |c| c.calibration);
        let k = config.as_ref().map_or(DEFAULT_PMP_ENTRIES, |c| c.pmp_entries);
        let extra = config.as_ref().map_or(0, |c| c.extra_banks);
        Self {
            state: MachineState::new(csrs, reset_pc),
            mem,
            pmp: PmpUnit::new(k),
            config,
            cal,
            trap_mode,
            prio: [1; IRQ_LINES as usize],
            irq_enable: u32::MAX,
            uistk_limit: 0,
            halt_on_ebreak: false,
            trace: Trace::default(),
            stats: MachineStats::default(),
            banks: BankSet::new(extra),
            frames: Vec::new(),
            kernel_blocks: Vec::new(),
            paused_since: None,
            paused_total: 0,
        }
    }

    pub fn has_extension(&self) -> bool {
        self.config.is_some()
    }

    pub fn pmp_words(&self) -> u32 {
        PmpSet::record_words(self.pmp.k())
    }

    pub fn handler_depth(&self) -> usize {
        self.frames.len()
    }

    /// Line and remaining budget of the running handler.
    pub fn active_handler(&self) -> Option<(u32, u64)> {
        self.frames.last().map(|f| (f.line, f.remaining))
    }

    /// Modelled kernel work in progress, innermost last.
    pub fn kernel_blocks(&self) -> &[KernelBlock] {
        &self.kernel_blocks
    }

    pub fn kernel_busy(&self) -> bool {
        !self.kernel_blocks.is_empty()
    }

    pub fn push_kernel_block(&mut self, block: KernelBlock) {
        self.state.refill_pending = false;
        self.trace.record(self.state.cycle, "kernel", "block", "-", || {
            format!("tag={} cycles={} masked={}", block.tag, block.remaining, block.masked)
        });
        self.kernel_blocks.push(block);
    }

    /// Detach the kernel block stack so user code can run on top of it.
    pub fn park_kernel_blocks(&mut self) -> Vec<KernelBlock> {
        std::mem::take(&mut self.kernel_blocks)
    }

    pub fn unpark_kernel_blocks(&mut self, blocks: Vec<KernelBlock>) {
        debug_assert!(self.kernel_blocks.is_empty());
        self.kernel_blocks = blocks;
    }

    /// Leave the modelled kernel and run user code at `pc`.
    pub fn resume_user(&mut self, pc: u32) {
        debug_assert!(self.kernel_blocks.is_empty());
        self.state.mode = Mode::User;
        self.state.redirect(pc);
    }

    /// `mtime`: cycles elapsed while no handler was running.
    pub fn mtime(&self) -> u64 {
        let now = self.state.cycle;
        let paused = self.paused_total + self.paused_since.map_or(0, |p| now - p);
        now - paused
    }

    /// Set a budget entry's remaining count. If the owning handler is
    /// counting down right now the value lands at its write-back instead.
    pub fn replenish(&mut self, budget_ptr: u32, value: u32) -> Result<(), BusFault> {
        if let Some(top) = self.frames.last_mut() {
            if top.entry.budget_ptr == budget_ptr {
                top.pending_replenish = Some(value);
                return Ok(());
            }
        }
        self.mem.poke(budget_ptr, value)
    }

    fn current_prio(&self) -> u8 {
        self.frames.last().map_or(0, |f| f.prio)
    }

    fn sync_mtime(&mut self) {
        self.state.csrs.mtime = self.mtime();
    }

    fn pending_mask(&mut self) -> u32 {
        let c = self.state.cycle;
        let mut m = self.mem.mmio_mut().map_or(0, |b| b.pending(c)) & !(1 << IRQ_MTIMER);
        if self.state.csrs.mtime >= self.state.csrs.mtimecmp {
            m |= 1 << IRQ_MTIMER;
        }
        m
    }

    /// Earliest cycle after now at which a line may assert.
    pub fn next_event(&self) -> Option<u64> {
        let now = self.state.cycle;
        let dev = self.mem.mmio().and_then(|b| b.next_event(now));
        let cmp = self.state.csrs.mtimecmp;
        let timer = if self.frames.is_empty() && cmp != u64::MAX {
            let mt = self.mtime();
            Some(if cmp > mt { now + (cmp - mt) } else { now })
        } else {
            None
        };
        [dev, timer].into_iter().flatten().min().map(|t| t.max(now + 1))
    }

    fn ack_line(&mut self, line: u32) {
        let c = self.state.cycle;
        if line != IRQ_MTIMER {
            if let Some(b) = self.mem.mmio_mut() {
                b.ack(line, c);
            }
        }
    }

    fn iid_lookup(&self, line: u32) -> IidLookup {
        let Some(cfg) = &self.config else { return IidLookup::Miss };
        match cfg.iid {
            IidMode::Cam => cam_lookup(&self.state.csrs.cam, line),
            _ => table_lookup(&self.mem, self.state.csrs.iid_base(), line).unwrap_or(IidLookup::Miss),
        }
    }
}

impl Machine {
    /// Advance by one instruction, entry, return, trap or kernel slice.
    pub fn step(&mut self) -> Result<MachineEvent, SimError> {
        self.sync_mtime();
        if let Some(top) = self.frames.last() {
            if top.remaining == 0 {
                return self.return_uintr(Some(ForcedCause::Temporal));
            }
        }
        if let Some(ev) = self.check_interrupts()? {
            return Ok(ev);
        }
        if !self.frames.is_empty() {
            return self.step_handler();
        }
        if let Some(ev) = self.step_kernel_block() {
            return Ok(ev);
        }
        self.step_core()
    }

    /// Step until `cycle >= limit` or the machine halts. Returns whether it
    /// halted.
    pub fn run_until(&mut self, limit: u64) -> Result<bool, SimError> {
        while self.state.cycle < limit {
            if self.step()? == MachineEvent::Halted {
                return Ok(true);
            }
        }
        Ok(false)
    }

    fn check_interrupts(&mut self) -> Result<Option<MachineEvent>, SimError> {
        let mask = self.pending_mask();
        if mask == 0 {
            return Ok(None);
        }
        let block_masked = self.frames.is_empty() && self.kernel_blocks.last().is_some_and(|b| b.masked);
        let ext_on = self.config.is_some() && self.state.csrs.uintr_enabled();
        let cur = self.current_prio();
        let mut best: Option<(u8, u32, IidEntry)> = None;
        let mut kernel_mask = 0u32;
        let mut bits = mask;
        while bits != 0 {
            let line = bits.trailing_zeros();
            bits &= bits - 1;
            if ext_on && line != IRQ_MTIMER {
                match self.iid_lookup(line) {
                    IidLookup::Hit(e) => {
                        let p = self.prio[line as usize];
                        if p > cur && !block_masked && best.is_none_or(|b| p > b.0) {
                            best = Some((p, line, e));
                        }
                        continue;
                    }
                    IidLookup::Disabled(_) => continue,
                    IidLookup::Miss => {}
                }
            }
            kernel_mask |= 1 << line;
        }
        if let Some((p, line, e)) = best {
            return self.enter_uintr(line, p, e).map(Some);
        }
        kernel_mask &= self.irq_enable;
        if kernel_mask == 0 || !self.frames.is_empty() {
            return Ok(None);
        }
        if !self.kernel_blocks.is_empty() {
            // the tick is not reentrant
            kernel_mask &= !(1 << IRQ_MTIMER);
        }
        let allowed = match self.kernel_blocks.last() {
            Some(b) => kernel_mask != 0 && b.kernel_irq_ok && !b.masked,
            None => self.state.mode == Mode::User || self.state.csrs.mstatus & MSTATUS_MIE != 0,
        };
        if !allowed {
            return Ok(None);
        }
        // the scheduler tick outranks device lines so a device storm
        // cannot stop the interleave
        let line = if kernel_mask & (1 << IRQ_MTIMER) != 0 { IRQ_MTIMER } else { kernel_mask.trailing_zeros() };
        self.ack_line(line);
        Ok(Some(self.take_trap(cause::INTERRUPT | line, 0)))
    }

    fn take_trap(&mut self, mcause: u32, tval: u32) -> MachineEvent {
        let epc = self.state.pc;
        let t = self.state.cycle;
        let sched = compose_kernel_entry(&self.cal, t);
        self.stats.traps += 1;
        self.trace.record(t, "trap", "enter", "-", || format!("cause={mcause:#x} tval={tval:#x} epc={epc:#010x}"));
        if self.kernel_blocks.is_empty() {
            let s = &mut self.state.csrs;
            s.mepc = epc;
            s.mcause = mcause;
            s.mtval = tval;
            let mpp = if self.state.mode == Mode::Machine { MSTATUS_MPP } else { 0 };
            let mpie = if s.mstatus & MSTATUS_MIE != 0 { MSTATUS_MPIE } else { 0 };
            s.mstatus = (s.mstatus & !(MSTATUS_MIE | MSTATUS_MPIE | MSTATUS_MPP)) | mpp | mpie;
            self.state.mode = Mode::Machine;
        }
        self.state.cycle = t + sched.total;
        match self.trap_mode {
            TrapMode::Native => self.state.redirect(self.state.csrs.mtvec),
            TrapMode::Hosted => self.state.refill_pending = false,
        }
        MachineEvent::Trap { cause: mcause, tval, epc }
    }

    fn check_stack(&self, addr: u32, words: u32) -> Result<(), SimError> {
        if addr < self.uistk_limit || self.mem.port_of(addr).is_none() || self.mem.port_of(addr + 4 * words - 4).is_none() {
            return Err(SimError::StackOverflow { addr, limit: self.uistk_limit });
        }
        Ok(())
    }

    fn enter_uintr(&mut self, line: u32, prio: u8, e: IidEntry) -> Result<MachineEvent, SimError> {
        let cfg = self.config.as_ref().expect("entry needs the extension");
        let (iid_mode, kernel_pmp) = (cfg.iid, cfg.kernel_pmp);
        let t = self.state.cycle;
        let preempted = if !self.frames.is_empty() {
            Preempted::Handler
        } else if !self.kernel_blocks.is_empty() || self.state.mode == Mode::Machine {
            Preempted::Kernel
        } else {
            Preempted::Thread
        };
        self.ack_line(line);
        let pmp_words = self.pmp_words();
        let base = self.state.csrs.iid_base();
        let iid = match iid_mode {
            IidMode::Cam => IidSource::Cam,
            _ => IidSource::Table(table_record_addr(base, line).expect("hit implies a valid record")),
        };

        let writeback_budget = match self.frames.last() {
            Some(top) => {
                let v = top.pending_replenish.unwrap_or(top.remaining as u32);
                self.mem.poke(top.entry.budget_ptr, v)?;
                Some(top.entry.budget_ptr)
            }
            None => None,
        };
        let mut sp = self.state.csrs.muistk;
        let kernel_pmp_spill = if preempted != Preempted::Handler && kernel_pmp == KernelPmp::Spill {
            sp = sp.wrapping_sub(4 * pmp_words);
            self.check_stack(sp, pmp_words)?;
            Some(sp)
        } else {
            None
        };
        let bank = self.banks.free();
        let ctx = match bank {
            Some(_) => CtxSave::Bank,
            None => {
                sp = sp.wrapping_sub(4 * FRAME_WORDS);
                self.check_stack(sp, FRAME_WORDS)?;
                CtxSave::Spill(sp)
            }
        };
        let plan = EntryPlan {
            start: t,
            iid,
            writeback_budget,
            kernel_pmp_spill,
            ctx,
            pmp_ptr: e.pmp_ptr,
            budget_ptr: e.budget_ptr,
            pmp_words,
        };
        let schedule = compose_entry(&mut self.mem, &self.cal, &plan)?;

        match kernel_pmp_spill {
            Some(a) => self.mem.write_words(a, &self.pmp.active.encode())?,
            None if preempted != Preempted::Handler => {
                self.pmp.shadow_swap(ShadowDirection::Save);
            }
            None => {}
        }
        let frame = ContextFrame::capture(&self.state, self.state.csrs.muiepc);
        let saved = match (bank, ctx) {
            (Some(i), _) => {
                self.banks.store(i, frame);
                SavedCtx::Bank(i)
            }
            (None, CtxSave::Spill(a)) => {
                self.mem.write_words(a, &frame.encode())?;
                SavedCtx::Spill(a)
            }
            (None, CtxSave::Bank) => unreachable!(),
        };
        self.state.csrs.muistk = sp;
        self.pmp.active = PmpSet::decode(&self.mem.read_words(e.pmp_ptr, pmp_words)?, line);
        let remaining = self.mem.peek(e.budget_ptr)? as u64;
        let vector = self.mem.peek(vector_addr(base, line))?;
        self.state.csrs.muiepc = self.state.pc;
        if preempted != Preempted::Handler {
            self.paused_since = Some(t);
        }
        self.state.zero_gprs();
        self.state.mode = Mode::User;
        self.state.cycle = t + schedule.total;
        self.state.redirect(vector);
        self.state.active_bank = self.frames.len() + 1;
        self.frames.push(HandlerFrame {
            line,
            entry: e,
            prio,
            remaining,
            preempted,
            saved,
            kernel_pmp_spill,
            pending_replenish: None,
            entered_at: self.state.cycle,
        });
        self.stats.uintr_entries += 1;
        self.trace_schedule("entry", &schedule);
        self.trace.record(self.state.cycle, "uintr", "enter", "-", || {
            format!("line={line} prio={prio} budget={remaining} preempted={preempted:?} vector={vector:#010x}")
        });
        Ok(MachineEvent::UintrEntered { line, preempted, schedule })
    }

    fn return_uintr(&mut self, forced: Option<ForcedCause>) -> Result<MachineEvent, SimError> {
        if self.state.refill_pending {
            self.state.cycle += self.cal.core.refill_cycles;
            self.state.refill_pending = false;
        }
        let t = self.state.cycle;
        let f = self.frames.pop().expect("return needs an active handler");
        let wb = f.pending_replenish.unwrap_or(f.remaining as u32);
        self.mem.poke(f.entry.budget_ptr, wb)?;
        let pmp_words = self.pmp_words();
        let ctx = match f.saved {
            SavedCtx::Bank(_) => CtxRestore::Bank,
            SavedCtx::Spill(a) => CtxRestore::Unspill(a),
        };
        let pmp = match (f.preempted, f.kernel_pmp_spill) {
            (Preempted::Handler, _) => {
                let outer = self.frames.last().expect("nested frame has an outer handler");
                PmpRestore::Reload { pmp_ptr: outer.entry.pmp_ptr, budget_ptr: outer.entry.budget_ptr }
            }
            (_, Some(a)) => PmpRestore::Unspill(a),
            (_, None) => PmpRestore::Shadow,
        };
        let plan = ReturnPlan { start: t, budget_writeback: f.entry.budget_ptr, ctx, pmp, pmp_words };
        let schedule = compose_return(&mut self.mem, &self.cal, &plan)?;

        let frame = match f.saved {
            SavedCtx::Bank(i) => self.banks.take(i),
            SavedCtx::Spill(a) => {
                self.state.csrs.muistk = a + 4 * FRAME_WORDS;
                ContextFrame::decode(&self.mem.read_words(a, FRAME_WORDS)?)
            }
        };
        match pmp {
            PmpRestore::Reload { pmp_ptr, budget_ptr } => {
                let words = self.mem.read_words(pmp_ptr, pmp_words)?;
                let remaining = self.mem.peek(budget_ptr)? as u64;
                let outer = self.frames.last_mut().expect("checked above");
                outer.remaining = remaining;
                self.pmp.active = PmpSet::decode(&words, outer.line);
            }
            PmpRestore::Unspill(a) => {
                self.pmp.active = PmpSet::decode(&self.mem.read_words(a, pmp_words)?, 0);
                self.state.csrs.muistk = a + 4 * pmp_words;
            }
            PmpRestore::Shadow => {
                self.pmp.shadow_swap(ShadowDirection::Restore);
            }
        }
        let resume = self.state.csrs.muiepc;
        frame.restore_into(&mut self.state);
        self.state.csrs.muiepc = frame.epc;
        if let Some(c) = forced {
            self.state.csrs.muicause = c.code();
            match c {
                ForcedCause::Spatial => self.stats.forced_spatial += 1,
                ForcedCause::Temporal => self.stats.forced_temporal += 1,
                ForcedCause::Exception(_) => self.stats.forced_exception += 1,
            }
        }
        self.state.cycle = t + schedule.total;
        self.state.redirect(resume);
        self.state.active_bank = self.frames.len();
        if f.preempted != Preempted::Handler {
            if let Some(p) = self.paused_since.take() {
                self.paused_total += self.state.cycle - p;
            }
        }
        let ran = t - f.entered_at;
        let line = f.line;
        self.trace_schedule("return", &schedule);
        self.trace.record(self.state.cycle, "uintr", "return", "-", || {
            format!("line={line} forced={forced:?} ran={ran} resume={resume:#010x}")
        });
        Ok(MachineEvent::UintrReturned { line, forced, schedule, ran })
    }

    fn trace_schedule(&mut self, what: &str, s: &EntrySchedule) {
        if self.trace.is_enabled() {
            for r in s.records(what) {
                self.trace.push(r);
            }
        }
    }

    fn step_handler(&mut self) -> Result<MachineEvent, SimError> {
        let remaining = self.frames.last().expect("handler active").remaining;
        let rep = step(&mut self.state, &mut self.mem, &self.pmp, &self.cal.core, Some(remaining));
        let forced = match rep.event {
            StepEvent::Retired => {
                self.frames.last_mut().expect("handler active").remaining -= rep.cycles;
                self.stats.instructions += 1;
                self.trace_retire(&rep);
                return Ok(MachineEvent::Retired(rep));
            }
            StepEvent::Uret => None,
            StepEvent::BudgetExhausted { .. } => {
                self.state.cycle += remaining;
                self.frames.last_mut().expect("handler active").remaining = 0;
                Some(ForcedCause::Temporal)
            }
            StepEvent::Exception { pmp_denied: true, .. } => Some(ForcedCause::Spatial),
            StepEvent::Exception { cause, .. } => Some(ForcedCause::Exception(cause)),
            StepEvent::Ecall => Some(ForcedCause::Exception(cause::ECALL_U)),
            StepEvent::Ebreak => Some(ForcedCause::Exception(cause::BREAKPOINT)),
            StepEvent::Mret | StepEvent::Wfi => Some(ForcedCause::Exception(cause::ILLEGAL_INSTRUCTION)),
        };
        self.return_uintr(forced)
    }

    fn step_kernel_block(&mut self) -> Option<MachineEvent> {
        let now = self.state.cycle;
        let next = self.next_event();
        let b = self.kernel_blocks.last_mut()?;
        let n = match next {
            Some(t) => b.remaining.min(t - now),
            None => b.remaining,
        };
        b.remaining -= n;
        self.state.cycle += n;
        if b.remaining == 0 {
            let tag = b.tag;
            self.kernel_blocks.pop();
            self.trace.record(self.state.cycle, "kernel", "done", "-", || format!("tag={tag}"));
            return Some(MachineEvent::KernelBlockDone { tag });
        }
        Some(MachineEvent::KernelProgress(n))
    }

    fn retire_system(&mut self, next_pc: u32) {
        let refill = if self.state.refill_pending { self.cal.core.refill_cycles } else { 0 };
        self.state.cycle += refill + 1;
        self.state.refill_pending = false;
        self.state.pc = next_pc;
        self.stats.instructions += 1;
    }

    fn step_core(&mut self) -> Result<MachineEvent, SimError> {
        let rep = step(&mut self.state, &mut self.mem, &self.pmp, &self.cal.core, None);
        match rep.event {
            StepEvent::Retired => {
                self.stats.instructions += 1;
                self.trace_retire(&rep);
                Ok(MachineEvent::Retired(rep))
            }
            StepEvent::Exception { cause, tval, .. } => Ok(self.take_trap(cause, tval)),
            StepEvent::Ecall => {
                let c = if self.state.mode == Mode::User { cause::ECALL_U } else { cause::ECALL_M };
                Ok(self.take_trap(c, 0))
            }
            StepEvent::Ebreak if self.halt_on_ebreak => Ok(MachineEvent::Halted),
            StepEvent::Ebreak => Ok(self.take_trap(cause::BREAKPOINT, rep.pc)),
            // no handler is active, so there is nothing to return to
            StepEvent::Uret => Ok(self.take_trap(cause::ILLEGAL_INSTRUCTION, encode(&rep.inst))),
            StepEvent::Mret => {
                let s = &mut self.state.csrs;
                let mode = if s.mstatus & MSTATUS_MPP != 0 { Mode::Machine } else { Mode::User };
                let mie = if s.mstatus & MSTATUS_MPIE != 0 { MSTATUS_MIE } else { 0 };
                s.mstatus = (s.mstatus & !(MSTATUS_MIE | MSTATUS_MPP)) | mie | MSTATUS_MPIE;
                let target = s.mepc;
                self.retire_system(target);
                self.state.mode = mode;
                self.state.refill_pending = true;
                self.trace_retire(&rep);
                Ok(MachineEvent::Mret)
            }
            StepEvent::Wfi => {
                if self.pending_mask() != 0 {
                    self.retire_system(rep.pc.wrapping_add(4));
                    self.trace_retire(&rep);
                    return Ok(MachineEvent::Retired(rep));
                }
                let next = self.next_event().ok_or(SimError::Deadlock)?;
                let n = next - self.state.cycle;
                self.state.cycle = next;
                // a wake-up resumes after the wfi, so a trap taken now
                // returns past it
                self.state.pc = rep.pc.wrapping_add(4);
                Ok(MachineEvent::Idle(n))
            }
            StepEvent::BudgetExhausted { .. } => unreachable!("threads run without a budget"),
        }
    }

    fn trace_retire(&mut self, rep: &CycleReport) {
        if !self.trace.is_enabled() {
            return;
        }
        let end = self.state.cycle;
        let port = rep.mem.and_then(|m| self.mem.port_of(m.addr)).map_or("-", |p| p.name());
        self.trace.record(end, "core", "retire", port, || {
            let mut d = format!("pc={:#010x} {}", rep.pc, rep.inst);
            if let Some(m) = rep.mem {
                let dir = if m.is_write { "st" } else { "ld" };
                d.push_str(&format!(" {dir}[{:#010x}]={:#x}", m.addr, m.value));
            }
            d
        });
    }
}
