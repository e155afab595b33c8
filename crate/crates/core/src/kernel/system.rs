use std::ops::Range;

use crate::engine::machine::{memory_for, KernelBlock, Machine, MachineEvent, SimError, TrapMode, IRQ_MTIMER};
use crate::isa::csr::MUICTL_ENABLE;
use crate::isa::exec::cause;
use crate::isa::{encode, Instruction};
use crate::memory::{MmioBus, MMIO_BASE, MMIO_SIZE};
use crate::protection::{PmpEntry, PmpSet, PERM_R, PERM_W, PERM_X};

use super::layout::{hw_stack, IDLE_CODE_END, IDLE_PC, IID_BASE};
use super::{sys, BudgetPolicy, Handle, KernelCosts, KernelError, Scheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThreadState {
    Ready,
    Blocked,
    Dead,
}

#[derive(Debug, Clone)]
pub struct Process {
    pub id: u32,
    pub pmp_set: PmpSet,
    pub threads: Vec<usize>,
    pub iid_allocations: Vec<Handle>,
    /// Interrupt lines this process may register, as a bit mask.
    pub caps: u32,
    pub code: Range<u32>,
    /// Shared PMP record for the process's handlers: address and users.
    pub(super) pmp_record: Option<(u32, u32)>,
}

#[derive(Debug, Clone)]
pub struct Thread {
    pub id: usize,
    pub proc: u32,
    pub regs: [u32; 32],
    pub pc: u32,
    pub state: ThreadState,
}

#[derive(Debug, Clone)]
pub(super) struct Registration {
    pub proc: u32,
    pub line: u32,
    pub entry: u32,
    pub policy: BudgetPolicy,
    pub pmp_ptr: u32,
    pub budget_ptr: u32,
    pub cam_slot: Option<usize>,
    pub enabled: bool,
    pub prio: u8,
    pub next_replenish: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Path {
    Kernel,
    IntelFast,
    Software,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Cont {
    Resume,
    Tick,
    UpcallStart { reg: usize, path: Path },
    UpcallEnd,
    Reschedule,
}

#[derive(Debug, Clone, Copy)]
struct Upcall {
    path: Path,
}

/// The kernel plus the machine it runs on.
pub struct System {
    pub m: Machine,
    pub scheme: Scheme,
    pub costs: KernelCosts,
    /// Scheduler quantum in `mtime` cycles.
    pub quantum: u64,
    pub procs: Vec<Process>,
    pub threads: Vec<Thread>,
    pub current: usize,
    pub(super) regs: Vec<Option<Registration>>,
    pub(super) pmp_slots: Vec<bool>,
    pub(super) budget_slots: Vec<bool>,
    conts: Vec<Cont>,
    upcall: Option<Upcall>,
    parked: Option<(Vec<KernelBlock>, Vec<Cont>)>,
    tick_on: bool,
    pub upcalls: u64,
    pub ticks: u64,
    pub switches: u64,
}

pub const DEFAULT_QUANTUM: u64 = 10_000;

impl System {
    /// Fresh machine with the kernel initialised: extension CSRs
    /// programmed, hardware stack set, idle thread installed.
    pub fn boot(
        scheme: Scheme,
        costs: KernelCosts,
        mmio: Option<Box<dyn MmioBus>>,
        ext_enabled: bool,
    ) -> Result<Self, KernelError> {
        if let Some(c) = scheme.config() {
            c.validate()?;
        }
        let mut mem = memory_for(scheme.config());
        if let Some(b) = mmio {
            mem.attach_mmio(b);
        }
        mem.poke(IDLE_PC, encode(&Instruction::Wfi)).expect("flash is mapped");
        mem.poke(IDLE_PC + 4, encode(&Instruction::Jal { rd: 0, offset: -4 })).expect("flash is mapped");
        let mut m = Machine::new(scheme.config().cloned(), mem, IDLE_PC, TrapMode::Hosted);
        if let Some(c) = scheme.config() {
            let (top, limit) = hw_stack(c);
            m.state.csrs.set_muictl(IID_BASE | if ext_enabled { MUICTL_ENABLE } else { 0 });
            m.state.csrs.muistk = top;
            m.uistk_limit = limit;
        }
        let k = m.pmp.k();
        let idle = Process {
            id: 0,
            pmp_set: PmpSet::from_entries(k, 0, &[PmpEntry::new(IDLE_PC, IDLE_CODE_END, PERM_R | PERM_X)]),
            threads: vec![0],
            iid_allocations: Vec::new(),
            caps: 0,
            code: IDLE_PC..IDLE_CODE_END,
            pmp_record: None,
        };
        let idle_thread = Thread { id: 0, proc: 0, regs: [0; 32], pc: IDLE_PC, state: ThreadState::Ready };
        Ok(Self {
            m,
            scheme,
            costs,
            quantum: DEFAULT_QUANTUM,
            procs: vec![idle],
            threads: vec![idle_thread],
            current: 0,
            regs: Vec::new(),
            pmp_slots: vec![false; super::layout::PMP_RECORD_SLOTS as usize],
            budget_slots: vec![false; super::layout::BUDGET_SLOTS as usize],
            conts: Vec::new(),
            upcall: None,
            parked: None,
            tick_on: false,
            upcalls: 0,
            ticks: 0,
            switches: 0,
        })
    }

    /// A process whose domain is its code (read/execute), its data
    /// (read/write) and optionally the device window.
    pub fn create_process(&mut self, code: Range<u32>, data: Range<u32>, mmio: bool, caps: u32) -> u32 {
        let id = self.procs.len() as u32;
        let mut entries = vec![
            PmpEntry::new(code.start, code.end, PERM_R | PERM_X),
            PmpEntry::new(data.start, data.end, PERM_R | PERM_W),
        ];
        if mmio {
            entries.push(PmpEntry::new(MMIO_BASE, MMIO_BASE + MMIO_SIZE, PERM_R | PERM_W));
        }
        self.procs.push(Process {
            id,
            pmp_set: PmpSet::from_entries(self.m.pmp.k(), id, &entries),
            threads: Vec::new(),
            iid_allocations: Vec::new(),
            caps,
            code,
            pmp_record: None,
        });
        id
    }

    pub fn spawn(&mut self, proc: u32, pc: u32, sp: u32) -> usize {
        let id = self.threads.len();
        let mut regs = [0; 32];
        regs[2] = sp;
        self.threads.push(Thread { id, proc, regs, pc, state: ThreadState::Ready });
        self.procs[proc as usize].threads.push(id);
        id
    }

    pub fn set_thread_state(&mut self, thread: usize, state: ThreadState) {
        self.threads[thread].state = state;
        self.update_tick();
    }

    /// Hand the core to the first ready thread.
    pub fn start(&mut self) {
        self.current = self.pick_next(0);
        self.update_tick();
        self.resume_thread();
    }

    pub fn current_proc(&self) -> u32 {
        self.threads[self.current].proc
    }

    pub fn upcall_active(&self) -> bool {
        self.upcall.is_some()
    }

    /// Whether the kernel is running a modelled path (or has one parked).
    pub fn in_kernel(&self) -> bool {
        !self.conts.is_empty() || self.parked.is_some()
    }

    pub fn step(&mut self) -> Result<MachineEvent, SimError> {
        let ev = self.m.step()?;
        match ev {
            MachineEvent::Trap { cause, epc, .. } => self.on_trap(cause, epc),
            MachineEvent::KernelBlockDone { .. } => self.on_block_done(),
            _ => {}
        }
        Ok(ev)
    }

    pub fn run_until(&mut self, limit: u64) -> Result<(), SimError> {
        while self.m.state.cycle < limit {
            self.step()?;
        }
        Ok(())
    }

    fn push(&mut self, block: KernelBlock, cont: Cont) {
        self.m.push_kernel_block(block);
        self.conts.push(cont);
    }

    fn save_thread(&mut self, epc: u32) {
        let t = &mut self.threads[self.current];
        t.regs = *self.m.state.gprs();
        t.pc = epc;
    }

    fn resume_thread(&mut self) {
        let t = &self.threads[self.current];
        self.m.state.set_gprs(&t.regs);
        self.m.pmp.active = self.procs[t.proc as usize].pmp_set.clone();
        self.m.resume_user(t.pc);
    }

    /// Next ready thread after `from` in round-robin order; the idle thread
    /// only when nothing else can run.
    fn pick_next(&self, from: usize) -> usize {
        let n = self.threads.len();
        (1..=n)
            .map(|i| (from + i) % n)
            .find(|&i| i != 0 && self.threads[i].state == ThreadState::Ready)
            .unwrap_or(0)
    }

    /// The tick runs while there is something to rotate or replenish.
    pub(super) fn update_tick_pub(&mut self) {
        self.update_tick();
    }

    fn update_tick(&mut self) {
        let runnable = self.threads[1..].iter().filter(|t| t.state == ThreadState::Ready).count();
        let want = runnable >= 2 || self.regs.iter().flatten().any(|r| r.policy.period > 0);
        if want && !self.tick_on {
            self.m.state.csrs.mtimecmp = self.m.mtime() + self.quantum;
        } else if !want {
            self.m.state.csrs.mtimecmp = u64::MAX;
        }
        self.tick_on = want;
    }

    fn on_trap(&mut self, mcause: u32, epc: u32) {
        let from_user = self.conts.is_empty();
        if from_user && self.upcall.is_some() {
            // the upcall handler returned (uret traps on this core) or faulted
            let path = self.upcall.expect("checked").path;
            let cost = match path {
                Path::Kernel => self.costs.kernel_exit,
                Path::IntelFast => self.costs.intel_fast_exit,
                Path::Software => self.costs.software_exit,
            };
            self.push(KernelBlock::new(cost, 0), Cont::UpcallEnd);
            return;
        }
        if from_user {
            self.save_thread(epc);
        }
        if mcause & cause::INTERRUPT != 0 {
            let line = mcause & !cause::INTERRUPT;
            if line == IRQ_MTIMER {
                let block = KernelBlock::new(self.costs.tick, 0);
                let block = if matches!(self.scheme, Scheme::Software) { block.preemptible() } else { block };
                self.push(block, Cont::Tick);
                return;
            }
            self.dispatch_device(line, from_user);
            return;
        }
        match mcause {
            cause::ECALL_U => {
                let r = self.m.state.gprs();
                let (call, a) = (r[17], [r[10], r[11], r[12], r[13]]);
                let result = self.syscall(call, a);
                let t = &mut self.threads[self.current];
                t.pc = epc.wrapping_add(4);
                t.regs[10] = result as u32;
                let cont = if matches!(call, sys::YIELD | sys::EXIT) { Cont::Reschedule } else { Cont::Resume };
                self.push(KernelBlock::new(self.costs.syscall, 0), cont);
            }
            _ => {
                self.threads[self.current].state = ThreadState::Dead;
                self.update_tick();
                self.push(KernelBlock::new(self.costs.fault, 0), Cont::Reschedule);
            }
        }
    }

    fn dispatch_device(&mut self, line: u32, from_user: bool) {
        let found = self.regs.iter().position(|r| r.as_ref().is_some_and(|r| r.line == line && r.enabled));
        let Some(reg) = found else {
            self.push(KernelBlock::new(self.costs.spurious, 0), Cont::Resume);
            return;
        };
        let target_active = self.threads[self.current].proc == self.regs[reg].as_ref().expect("found").proc;
        let c = self.costs;
        let (cost, path) = match self.scheme {
            Scheme::Intel if from_user && target_active => (c.intel_fast_entry, Path::IntelFast),
            Scheme::Software if target_active => (c.software_entry - c.software_pmp, Path::Software),
            Scheme::Software => (c.software_entry, Path::Software),
            _ => (c.kernel_entry + c.kernel_entry_extra, Path::Kernel),
        };
        self.push(KernelBlock::new(cost, 0), Cont::UpcallStart { reg, path });
    }

    fn syscall(&mut self, call: u32, a: [u32; 4]) -> i32 {
        let proc = self.current_proc();
        let r = match call {
            sys::INT_REG => self.int_reg(proc, a[0], a[1], BudgetPolicy::new(a[2], a[3] as u64)).map(|h| h.0 as i32),
            sys::INT_DEL => self.int_del(proc, Handle(a[0])).map(|_| 0),
            sys::INT_PRIO => self.int_prio(proc, Handle(a[0]), a[1].min(255) as u8).map(|_| 0),
            sys::INT_ENA => self.int_ena(proc, Handle(a[0])).map(|_| 0),
            sys::INT_DIS => self.int_dis(proc, Handle(a[0])).map(|_| 0),
            sys::YIELD => Ok(0),
            sys::EXIT => {
                self.threads[self.current].state = ThreadState::Dead;
                self.update_tick();
                Ok(0)
            }
            _ => Err(KernelError::InvalidArgument),
        };
        r.unwrap_or_else(|e| e.code())
    }

    fn on_block_done(&mut self) {
        let cont = self.conts.pop().expect("every kernel block has a continuation");
        match cont {
            Cont::Resume => self.resume_thread(),
            Cont::Reschedule => {
                let next = self.pick_next(self.current);
                if next != self.current {
                    self.switches += 1;
                    self.current = next;
                }
                self.push(KernelBlock::new(self.costs.tick_masked, 0).masked(), Cont::Resume);
            }
            Cont::Tick => {
                self.ticks += 1;
                let now = self.m.state.cycle;
                self.replenish_tick(now);
                if self.tick_on {
                    self.m.state.csrs.mtimecmp = self.m.mtime() + self.quantum;
                }
                let next = self.pick_next(self.current);
                if next != self.current {
                    self.switches += 1;
                    self.current = next;
                }
                self.push(KernelBlock::new(self.costs.tick_masked, 0).masked(), Cont::Resume);
            }
            Cont::UpcallStart { reg, path } => {
                let r = self.regs[reg].as_ref().expect("registration outlives its upcall");
                let entry = r.entry;
                let set = self.procs[r.proc as usize].pmp_set.clone();
                if !self.conts.is_empty() {
                    let blocks = self.m.park_kernel_blocks();
                    self.parked = Some((blocks, std::mem::take(&mut self.conts)));
                }
                self.upcalls += 1;
                self.upcall = Some(Upcall { path });
                self.m.irq_enable = 0;
                self.m.state.zero_gprs();
                self.m.pmp.active = set;
                self.m.resume_user(entry);
            }
            Cont::UpcallEnd => {
                self.upcall = None;
                self.m.irq_enable = u32::MAX;
                match self.parked.take() {
                    Some((blocks, conts)) => {
                        self.m.unpark_kernel_blocks(blocks);
                        self.conts = conts;
                    }
                    None => self.resume_thread(),
                }
            }
        }
    }
}
