//! Differential corpus for the disabled extension: with `muictl` bit 0
//! clear, every variant must produce the same trace as the baseline core.

use crate::engine::iid::{table_record_addr, vector_addr, IidEntry};
use crate::engine::machine::{memory_for, TrapMode};
use crate::engine::{BudgetEntry, Machine, MachineEvent, Variant, VariantConfig};
use crate::isa::asm::assemble_at;
use crate::memory::{FLASH_BASE, SRAM_BASE};

use super::devices::ScriptedLines;
use super::HarnessError;

/// IID table placed where a table-mode lookup would find it, so a stray
/// enable would change the trace.
pub const COMPAT_TABLE: u32 = SRAM_BASE + 0x1_0000;
const DATA: u32 = SRAM_BASE + 0x1000;
const STACK: u32 = SRAM_BASE + 0x8000;
const STEP_LIMIT: usize = 200_000;

pub struct CompatProgram {
    pub name: &'static str,
    pub source: &'static str,
    /// `(cycle, line)` device interrupts.
    pub irqs: &'static [(u64, u32)],
}

const PRELUDE: &str = "
    li sp, STACK
    li s0, DATA
    la t0, trap
    csrw mtvec, t0
";

pub const CORPUS: [CompatProgram; 10] = [
    CompatProgram {
        name: "alu",
        source: "
    li a0, 0x12345678
    li a1, -7
    add a2, a0, a1
    sub a3, a0, a1
    xor a4, a2, a3
    sll a5, a0, a1
    srl a6, a0, a1
    sra a7, a1, a1
    slt t1, a1, a0
    sltu t2, a1, a0
    lui t3, 0xfffff
    auipc t4, 1
    addi x0, a0, 5
    ebreak
trap: mret
",
        irqs: &[],
    },
    CompatProgram {
        name: "muldiv",
        source: "
    li a0, -2147483648
    li a1, -1
    mul a2, a0, a1
    mulh a3, a0, a1
    mulhu a4, a0, a1
    mulhsu a5, a1, a0
    div a6, a0, a1
    rem a7, a0, a1
    li t1, 0
    div t2, a0, t1
    divu t3, a0, t1
    remu t4, a0, t1
    li t5, 1000
    li t6, 37
    divu s1, t5, t6
    remu s2, t5, t6
    ebreak
trap: mret
",
        irqs: &[],
    },
    CompatProgram {
        name: "loadstore",
        source: "
    li t0, 0x80ff7f01
    sw t0, 0(s0)
    lb a0, 0(s0)
    lbu a1, 1(s0)
    lh a2, 2(s0)
    lhu a3, 2(s0)
    sb t0, 5(s0)
    sh t0, 6(s0)
    lw a4, 4(s0)
    ebreak
trap: mret
",
        irqs: &[],
    },
    CompatProgram {
        name: "fib",
        source: "
    li a0, 0
    li a1, 1
    li t0, 30
fib_loop:
    add a2, a0, a1
    mv a0, a1
    mv a1, a2
    addi t0, t0, -1
    bnez t0, fib_loop
    beq a0, a1, never
    blt a1, a0, never
    bgeu a0, a1, never
    sw a0, 0(s0)
never:
    ebreak
trap: mret
",
        irqs: &[],
    },
    CompatProgram {
        name: "calls",
        source: "
    li a0, 10
    call fact
    sw a0, 0(s0)
    ebreak
fact:
    addi sp, sp, -8
    sw ra, 4(sp)
    sw a0, 0(sp)
    li t0, 1
    ble a0, t0, fact_base
    addi a0, a0, -1
    call fact
    lw t1, 0(sp)
    mul a0, a0, t1
    j fact_done
fact_base:
    li a0, 1
fact_done:
    lw ra, 4(sp)
    addi sp, sp, 8
    ret
trap: mret
",
        irqs: &[],
    },
    CompatProgram {
        name: "csr",
        source: "
    li t0, 0xabcd
    csrw mscratch, t0
    csrrs t1, mscratch, t0
    csrrc t2, mscratch, t0
    csrr t3, mscratch
    csrrwi t4, mscratch, 5
    csrr t5, mstatus
    ebreak
trap: mret
",
        irqs: &[],
    },
    CompatProgram {
        name: "ecall",
        source: "
    li a0, 1
    ecall
    ecall
    sw a0, 0(s0)
    ebreak
trap:
    csrr t0, mcause
    csrr t1, mepc
    addi t1, t1, 4
    csrw mepc, t1
    slli a0, a0, 1
    mret
",
        irqs: &[],
    },
    CompatProgram {
        name: "faults",
        source: "
    lw a0, 2(s0)
    li t0, 0x40000000
    lw a1, 0(t0)
    .word 0xffffffff
    sw a0, 0(s0)
    ebreak
trap:
    csrr t0, mcause
    csrr t2, mtval
    add a3, a3, t0
    csrr t1, mepc
    addi t1, t1, 4
    csrw mepc, t1
    mret
",
        irqs: &[],
    },
    CompatProgram {
        name: "irq_busy",
        source: "
    csrsi mstatus, 8
    li t0, 3000
spin:
    addi t0, t0, -1
    bnez t0, spin
    ebreak
trap:
    csrr t1, mcause
    lw t2, 0(s0)
    addi t2, t2, 1
    sw t2, 0(s0)
    sw t1, 4(s0)
    mret
",
        irqs: &[(100, 3), (101, 4), (900, 3), (2000, 5), (2005, 3)],
    },
    CompatProgram {
        name: "irq_wfi",
        source: "
    csrsi mstatus, 8
    li s1, 3
wait:
    wfi
    lw t0, 0(s0)
    blt t0, s1, wait
    ebreak
trap:
    lw t2, 0(s0)
    addi t2, t2, 1
    sw t2, 0(s0)
    mret
",
        irqs: &[(500, 3), (5000, 4), (9000, 3)],
    },
];

/// Everything externally visible about one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompatRun {
    pub events: Vec<String>,
    pub trace: String,
    pub regs: [u32; 32],
    pub pc: u32,
    pub cycle: u64,
    pub data: Vec<u32>,
}

/// Run one program. `config = None` is the baseline core; otherwise the
/// extension is present with an IID table registered for every device line
/// and `muictl` set to `table | enable`.
pub fn run_compat(prog: &CompatProgram, config: Option<VariantConfig>, enable: bool) -> Result<CompatRun, HarnessError> {
    let text = format!(".equ DATA, {DATA:#x}\n.equ STACK, {STACK:#x}\n{PRELUDE}{}", prog.source);
    let img = assemble_at(&text, FLASH_BASE)?;
    let mut mem = memory_for(config.as_ref());
    img.load_into(&mut mem)?;
    mem.attach_mmio(Box::new(ScriptedLines::new(prog.irqs.to_vec())));
    let ext = config.is_some();
    let mut m = Machine::new(config, mem, FLASH_BASE, TrapMode::Native);
    m.trace = crate::trace::Trace::enabled();
    m.halt_on_ebreak = true;
    if ext {
        let (pmp_ptr, budget_ptr) = (COMPAT_TABLE + 0x800, COMPAT_TABLE + 0x900);
        let budget = BudgetEntry { remaining: 1000, granted: 1000, policy_ref: 0 };
        m.mem.write_words(budget_ptr, &budget.encode())?;
        let handler = img.symbol("trap").expect("corpus programs define trap");
        for line in 0..8 {
            let e = IidEntry { int_num: line, pmp_ptr, budget_ptr, enabled: true };
            let addr = table_record_addr(COMPAT_TABLE, line).expect("line in table");
            m.mem.write_words(addr, &e.encode())?;
            m.mem.write_words(vector_addr(COMPAT_TABLE, line), &[handler])?;
        }
        m.state.csrs.muistk = STACK + 0x4000;
        m.state.csrs.set_muictl(COMPAT_TABLE | enable as u32);
    }
    let mut events = Vec::new();
    for _ in 0..STEP_LIMIT {
        let ev = m.step()?;
        let done = ev == MachineEvent::Halted;
        events.push(format!("{ev:?}"));
        if done {
            return Ok(CompatRun {
                events,
                trace: m.trace.render(),
                regs: *m.state.gprs(),
                pc: m.state.pc,
                cycle: m.state.cycle,
                data: m.mem.read_words(DATA, 8)?,
            });
        }
    }
    Err(HarnessError::Stalled { cycles: m.state.cycle })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompatCase {
    pub program: &'static str,
    pub variant: Variant,
    pub equal: bool,
}

/// Compare every corpus program on every variant against the baseline.
pub fn run_compat_suite() -> Result<Vec<CompatCase>, HarnessError> {
    let mut out = Vec::new();
    for p in &CORPUS {
        let base = run_compat(p, None, false)?;
        for v in Variant::ALL {
            let run = run_compat(p, Some(VariantConfig::preset(v)), false)?;
            out.push(CompatCase { program: p.name, variant: v, equal: run == base });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disabled_extension_matches_baseline() {
        let cases = run_compat_suite().unwrap();
        assert_eq!(cases.len(), 50);
        for c in &cases {
            assert!(c.equal, "{} on {} diverged", c.program, c.variant.name());
        }
    }

    #[test]
    fn enabling_changes_the_interrupt_programs() {
        let p = CORPUS.iter().find(|p| p.name == "irq_busy").unwrap();
        let base = run_compat(p, None, false).unwrap();
        let on = run_compat(p, Some(VariantConfig::preset(Variant::V1)), true);
        assert!(on.map_or(true, |r| r != base));
    }
}
