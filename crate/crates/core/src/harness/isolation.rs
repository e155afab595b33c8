//! Isolation attack suite: a handler that stores outside its domain or
//! never returns, preempting a thread, the kernel, or another handler.
//!
//! Every case checks that the handler was forcibly terminated with the
//! right `muicause`, that the preempted context is bit-identical when it
//! resumes, and that no word outside the attacker's domain changed except
//! the hardware-managed stack and budget entries.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::engine::machine::{ForcedCause, KernelBlock, Preempted};
use crate::engine::{MachineEvent, Variant};
use crate::isa::csr::{CAUSE_SPATIAL, CAUSE_TEMPORAL};
use crate::isa::Mode;
use crate::kernel::layout::{hw_stack, IID_BASE};
use crate::kernel::{BudgetPolicy, Handle, KernelCosts, Scheme};
use crate::memory::RegionKind;
use crate::protection::PmpSet;

use super::devices::{Devices, TIMER_IRQ, UART_IRQ};
use super::rig::{Rig, BG_DATA, TARGET_DATA};
use super::workloads::{ATTACKER, VICTIM};
use super::HarnessError;

/// Budget granted to the attacker in temporal cases.
pub const ATTACK_BUDGET: u32 = 300;
const STEP_LIMIT: usize = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Thread,
    Kernel,
    Handler,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Thread, Scenario::Kernel, Scenario::Handler];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Thread => "thread",
            Scenario::Kernel => "kernel",
            Scenario::Handler => "handler",
        }
    }

    fn preempted(self) -> Preempted {
        match self {
            Scenario::Thread => Preempted::Thread,
            Scenario::Kernel => Preempted::Kernel,
            Scenario::Handler => Preempted::Handler,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Violation {
    Spatial,
    Temporal,
}

impl Violation {
    pub const ALL: [Violation; 2] = [Violation::Spatial, Violation::Temporal];

    pub fn name(self) -> &'static str {
        match self {
            Violation::Spatial => "spatial",
            Violation::Temporal => "temporal",
        }
    }

    fn cause(self) -> (ForcedCause, u32) {
        match self {
            Violation::Spatial => (ForcedCause::Spatial, CAUSE_SPATIAL),
            Violation::Temporal => (ForcedCause::Temporal, CAUSE_TEMPORAL),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IsolationCase {
    pub variant: Variant,
    pub scenario: Scenario,
    pub violation: Violation,
    /// The attack entry preempted the intended context.
    pub preempted_ok: bool,
    pub terminated: bool,
    pub cause_ok: bool,
    pub context_ok: bool,
    /// Words outside the attacker's domain that changed.
    pub foreign_writes: Vec<u32>,
    /// Cycles the attacker ran before termination.
    pub ran: u64,
}

impl IsolationCase {
    pub fn passed(&self) -> bool {
        self.preempted_ok && self.terminated && self.cause_ok && self.context_ok && self.foreign_writes.is_empty()
    }
}

impl fmt::Display for IsolationCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:8} {:8} {} (preempted={} terminated={} cause={} context={} foreign_writes={} ran={})",
            self.variant.name(),
            self.scenario.name(),
            self.violation.name(),
            if self.passed() { "pass" } else { "FAIL" },
            self.preempted_ok,
            self.terminated,
            self.cause_ok,
            self.context_ok,
            self.foreign_writes.len(),
            self.ran
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IsolationReport {
    pub cases: Vec<IsolationCase>,
}

impl IsolationReport {
    pub fn passed(&self) -> bool {
        !self.cases.is_empty() && self.cases.iter().all(IsolationCase::passed)
    }

    pub fn pass_count(&self) -> usize {
        self.cases.iter().filter(|c| c.passed()).count()
    }
}

/// Everything the preempted context owns that must survive the attack.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Context {
    gprs: [u32; 32],
    pc: u32,
    mode: Mode,
    muiepc: u32,
    pmp: PmpSet,
    kernel: Vec<KernelBlock>,
    outer: Option<(u32, u64)>,
}

fn context(rig: &Rig) -> Context {
    let m = &rig.sys.m;
    Context {
        gprs: *m.state.gprs(),
        pc: m.state.pc,
        mode: m.state.mode,
        muiepc: m.state.csrs.muiepc,
        pmp: m.pmp.active.clone(),
        kernel: m.kernel_blocks().to_vec(),
        outer: m.active_handler(),
    }
}

/// All writable memory as `(addr, word)`.
fn memory(rig: &Rig) -> Vec<(u32, u32)> {
    let mem = &rig.sys.m.mem;
    let mut out = Vec::new();
    for r in mem.map().regions() {
        if matches!(r.kind, RegionKind::Sram | RegionKind::TcmStack | RegionKind::TcmTable) {
            for a in (r.base..r.base + r.size).step_by(4) {
                out.push((a, mem.peek(a).expect("region is mapped")));
            }
        }
    }
    out
}

pub fn run_isolation_case(variant: Variant, scenario: Scenario, violation: Violation) -> Result<IsolationCase, HarnessError> {
    let victim_addr = match scenario {
        Scenario::Thread => BG_DATA.start + 0x100,
        Scenario::Kernel => IID_BASE,
        Scenario::Handler => BG_DATA.start + 4,
    };
    run_case_at(variant, scenario, violation, victim_addr)
}

fn run_case_at(variant: Variant, scenario: Scenario, violation: Violation, victim_addr: u32) -> Result<IsolationCase, HarnessError> {
    let scheme = Scheme::variant(variant);
    let cfg = scheme.config().expect("extension scheme").clone();
    let baud = if scenario == Scenario::Handler { 1_000_000 } else { 0 };
    let mut rig = Rig::new(
        scheme,
        KernelCosts::default(),
        Devices::new(10, baud, 0),
        ATTACKER,
        1 << TIMER_IRQ,
        VICTIM,
        &[("VICTIM_ADDR", victim_addr)],
    )?;
    rig.sys.procs[rig.background as usize].caps = 1 << UART_IRQ;
    let (attacker, victim) = (rig.target, rig.background);

    let entry = rig.target_sym(violation.name());
    let policy = match violation {
        Violation::Spatial => BudgetPolicy::unlimited(),
        Violation::Temporal => BudgetPolicy::new(ATTACK_BUDGET, 0),
    };
    let attack = rig.sys.int_reg(attacker, TIMER_IRQ, entry, policy)?;
    rig.sys.int_prio(attacker, attack, 2)?;
    rig.sys.int_ena(attacker, attack)?;
    let mut guarded: Vec<Handle> = vec![attack];
    if scenario == Scenario::Handler {
        let benign = rig.bg_sym("benign");
        let h = rig.sys.int_reg(victim, UART_IRQ, benign, BudgetPolicy::unlimited())?;
        rig.sys.int_ena(victim, h)?;
        guarded.push(h);
    }
    let thread_pc = rig.bg_sym(if scenario == Scenario::Kernel { "kthread" } else { "thread" });
    rig.sys.spawn(victim, thread_pc, BG_DATA.end);
    rig.sys.start();
    if baud > 0 {
        let now = rig.cycle();
        rig.devices_mut().uart.start(now);
    }

    // Run until the scenario's victim context is on the core, then arm the
    // attack timer.
    let mut steps = 0;
    loop {
        let m = &rig.sys.m;
        let ready = match scenario {
            Scenario::Thread => rig.cycle() > 200 && !m.kernel_busy() && m.handler_depth() == 0,
            Scenario::Kernel => {
                m.handler_depth() == 0 && m.kernel_blocks().last().is_some_and(|b| !b.masked && b.remaining > 40)
            }
            Scenario::Handler => m.active_handler().is_some_and(|(line, _)| line == UART_IRQ) && rig.sys.m.stats.instructions > 100,
        };
        if ready {
            break;
        }
        rig.sys.step()?;
        steps += 1;
        if steps > STEP_LIMIT {
            return Err(HarnessError::Stalled { cycles: rig.cycle() });
        }
    }
    let now = rig.cycle();
    rig.devices_mut().timer.start(now);

    let (top, limit) = hw_stack(&cfg);
    let mut excluded = vec![limit..top, TARGET_DATA];
    for h in &guarded {
        let b = rig.sys.budget_ptr(*h).expect("registered");
        excluded.push(b..b + 4);
    }

    let (want_forced, want_code) = violation.cause();
    let mut before: Option<(Context, Vec<(u32, u32)>)> = None;
    let mut preempted_ok = false;
    loop {
        let snap = if before.is_none() { Some((context(&rig), memory(&rig))) } else { None };
        let ev = rig.sys.step()?;
        steps += 1;
        if steps > STEP_LIMIT {
            return Err(HarnessError::Stalled { cycles: rig.cycle() });
        }
        match ev {
            MachineEvent::UintrEntered { line: TIMER_IRQ, preempted, .. } if before.is_none() => {
                preempted_ok = preempted == scenario.preempted();
                before = snap;
            }
            MachineEvent::UintrReturned { line: TIMER_IRQ, forced, ran, .. } => {
                let (ctx0, mem0) = before.expect("return follows entry");
                let ctx1 = context(&rig);
                let mem1 = memory(&rig);
                let foreign_writes = mem0
                    .iter()
                    .zip(&mem1)
                    .filter(|(a, b)| a.1 != b.1 && !excluded.iter().any(|r| r.contains(&a.0)))
                    .map(|(a, _)| a.0)
                    .collect();
                return Ok(IsolationCase {
                    variant,
                    scenario,
                    violation,
                    preempted_ok,
                    terminated: forced == Some(want_forced),
                    cause_ok: rig.sys.m.state.csrs.muicause == want_code,
                    context_ok: ctx0 == ctx1,
                    foreign_writes,
                    ran,
                });
            }
            _ => {}
        }
    }
}

/// All scenarios and violation kinds for one variant.
pub fn run_isolation_suite(variant: Variant) -> Result<IsolationReport, HarnessError> {
    let mut cases = Vec::new();
    for s in Scenario::ALL {
        for v in Violation::ALL {
            cases.push(run_isolation_case(variant, s, v)?);
        }
    }
    Ok(IsolationReport { cases })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn v5_suite_passes() {
        let r = run_isolation_suite(Variant::V5).unwrap();
        for c in &r.cases {
            assert!(c.passed(), "{c}");
        }
        assert_eq!(r.pass_count(), 6);
    }

    #[test]
    fn in_domain_store_is_not_a_violation() {
        let own = TARGET_DATA.start + 0x100;
        let c = run_case_at(Variant::V2, Scenario::Thread, Violation::Spatial, own).unwrap();
        assert!(!c.terminated && !c.passed(), "{c}");
        assert!(c.context_ok && c.foreign_writes.is_empty());
    }
}
