//! Randomized nest/preempt traces checking the budget rules: the running
//! handler's countdown is written back when it is preempted and reloaded
//! when it resumes, consumption is conserved, and `mtime` does not advance
//! across handler execution.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::machine::{ForcedCause, Preempted};
use crate::engine::{MachineEvent, Variant};
use crate::kernel::{BudgetPolicy, Handle, KernelCosts, Scheme};

use super::devices::ScriptedLines;
use super::rig::{Rig, BG_DATA};
use super::workloads::VICTIM;
use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandlerSpec {
    pub line: u32,
    pub prio: u8,
    pub capacity: u32,
    /// Loop iterations before `uret`; `None` never returns.
    pub iterations: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceSpec {
    pub variant: Variant,
    /// Victim thread lives in system calls instead of computing.
    pub syscall_thread: bool,
    pub handlers: Vec<HandlerSpec>,
    /// `(cycle, line)` interrupt assertions.
    pub events: Vec<(u64, u32)>,
}

impl TraceSpec {
    pub fn random(rng: &mut impl Rng) -> Self {
        let variant = *Variant::ALL.choose(rng).expect("non-empty");
        let mut lines: Vec<u32> = (0..8).collect();
        lines.shuffle(rng);
        let n = rng.gen_range(2..=4);
        let handlers: Vec<HandlerSpec> = lines[..n]
            .iter()
            .map(|&line| HandlerSpec {
                line,
                prio: rng.gen_range(1..=4),
                capacity: rng.gen_range(100..4000),
                iterations: (!rng.gen_bool(0.15)).then(|| rng.gen_range(1..200)),
            })
            .collect();
        let events = (0..rng.gen_range(4..=16))
            .map(|_| (rng.gen_range(300..8_000), handlers[rng.gen_range(0..n)].line))
            .collect();
        Self { variant, syscall_thread: rng.gen_bool(0.5), handlers, events }
    }

    fn source(&self) -> String {
        let mut s = String::new();
        for h in &self.handlers {
            let l = h.line;
            match h.iterations {
                Some(n) => s.push_str(&format!(
                    "h{l}:\n    lui s0, %hi(DATA)\n    li t0, {n}\nl{l}:\n    sw t0, {}(s0)\n    addi t0, t0, -1\n    bnez t0, l{l}\n    uret\n",
                    4 * l
                )),
                None => s.push_str(&format!("h{l}:\n    j h{l}\n")),
            }
        }
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceOutcome {
    pub entries: u64,
    pub nested: u64,
    pub temporal: u64,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetSuiteReport {
    pub traces: usize,
    pub entries: u64,
    pub nested: u64,
    pub temporal: u64,
    /// `trace index: message`.
    pub violations: Vec<String>,
}

impl BudgetSuiteReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn run_budget_trace(spec: &TraceSpec) -> Result<TraceOutcome, HarnessError> {
    let caps = spec.handlers.iter().fold(0, |m, h| m | 1 << h.line);
    let src = spec.source();
    let mut rig = Rig::new(
        Scheme::variant(spec.variant),
        KernelCosts::default(),
        ScriptedLines::new(spec.events.clone()),
        &src,
        caps,
        VICTIM,
        &[],
    )?;
    let mut handles: BTreeMap<u32, Handle> = BTreeMap::new();
    for h in &spec.handlers {
        let entry = rig.target_sym(&format!("h{}", h.line));
        let hd = rig.sys.int_reg(rig.target, h.line, entry, BudgetPolicy::new(h.capacity, 0))?;
        rig.sys.int_prio(rig.target, hd, h.prio)?;
        rig.sys.int_ena(rig.target, hd)?;
        handles.insert(h.line, hd);
    }
    let pc = rig.bg_sym(if spec.syscall_thread { "kthread" } else { "thread" });
    rig.sys.spawn(rig.background, pc, BG_DATA.end);
    rig.sys.start();

    let granted: BTreeMap<u32, u64> = spec.handlers.iter().map(|h| (h.line, h.capacity as u64)).collect();
    let mut consumed: BTreeMap<u32, u64> = granted.keys().map(|&l| (l, 0)).collect();
    let budget_word = |rig: &Rig, line: u32| rig.peek(rig.sys.budget_ptr(handles[&line]).expect("registered")) as i64;
    let left = |consumed: &BTreeMap<u32, u64>, line: u32| granted[&line] as i64 - consumed[&line] as i64;

    let last = spec.events.iter().map(|e| e.0).max().unwrap_or(0);
    let limit = last + granted.values().sum::<u64>() * 4 + 20_000;
    let mut out = TraceOutcome::default();
    let mut pause_start = None;
    while rig.cycle() < limit {
        let top = rig.sys.m.active_handler();
        let mtime = rig.sys.m.mtime();
        let ev = rig.sys.step()?;
        let now = rig.cycle();
        let mut fail = |msg: String| out.violations.push(format!("cycle {now}: {msg}"));
        match ev {
            MachineEvent::Retired(rep) => {
                if let Some((line, _)) = top {
                    *consumed.get_mut(&line).expect("known line") += rep.cycles;
                }
            }
            MachineEvent::UintrEntered { line, preempted, .. } => {
                out.entries += 1;
                if preempted == Preempted::Handler {
                    out.nested += 1;
                    let (outer, rem) = top.expect("nested entry has an outer handler");
                    if budget_word(&rig, outer) != rem as i64 || rem as i64 != left(&consumed, outer) {
                        fail(format!("line {outer}: write-back {} vs countdown {rem} vs oracle {}", budget_word(&rig, outer), left(&consumed, outer)));
                    }
                } else {
                    pause_start = Some(mtime);
                }
                let (_, rem) = rig.sys.m.active_handler().expect("entered");
                if rem as i64 != left(&consumed, line) {
                    fail(format!("line {line}: loaded {rem}, oracle {}", left(&consumed, line)));
                }
            }
            MachineEvent::UintrReturned { line, forced, .. } => {
                if forced == Some(ForcedCause::Temporal) {
                    out.temporal += 1;
                    let rest = top.map_or(0, |t| t.1);
                    *consumed.get_mut(&line).expect("known line") += rest;
                }
                if budget_word(&rig, line) != left(&consumed, line) {
                    fail(format!("line {line}: returned with {} left, oracle {}", budget_word(&rig, line), left(&consumed, line)));
                }
                match rig.sys.m.active_handler() {
                    Some((outer, rem)) => {
                        if rem as i64 != left(&consumed, outer) || rem as i64 != budget_word(&rig, outer) {
                            fail(format!("line {outer}: reloaded {rem}, oracle {}", left(&consumed, outer)));
                        }
                    }
                    None => {
                        let start = pause_start.take().expect("outermost entry recorded");
                        let after = rig.sys.m.mtime();
                        if after != start {
                            fail(format!("mtime moved by {} across handlers", after as i64 - start as i64));
                        }
                    }
                }
            }
            _ => {}
        }
    }
    for (&line, &g) in &granted {
        let c = consumed[&line];
        if g as i64 - c as i64 != budget_word(&rig, line) {
            out.violations.push(format!("line {line}: granted {g} - consumed {c} != remaining {}", budget_word(&rig, line)));
        }
    }
    Ok(out)
}

/// `n` traces drawn from `seed`.
pub fn run_budget_suite(n: usize, seed: u64) -> Result<BudgetSuiteReport, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = BudgetSuiteReport { traces: n, ..Default::default() };
    for i in 0..n {
        let spec = TraceSpec::random(&mut rng);
        let o = run_budget_trace(&spec)?;
        report.entries += o.entries;
        report.nested += o.nested;
        report.temporal += o.temporal;
        report.violations.extend(o.violations.into_iter().map(|v| format!("trace {i}: {v}")));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_holds() {
        let r = run_budget_suite(40, 7).unwrap();
        assert!(r.passed(), "{:?}", &r.violations[..r.violations.len().min(5)]);
        assert!(r.nested > 0 && r.temporal > 0, "{r:?}");
    }
}
