//! One-instruction execution with the 3-stage pipeline cost model.
//!
//! Instruction fetch is not charged: the fetch stage overlaps execute and
//! flash is read through a prefetch buffer. Every instruction costs one
//! execute cycle plus the extras in [`CoreTiming`]; loads and stores add the
//! data transfer on the port serving the address, measured from the start of
//! execute, so they also absorb any stall behind a transfer still in flight.

use serde::{Deserialize, Serialize};

use super::csr::CsrAccess;
use super::inst::{BranchKind, CsrOp, CsrSrc, ImmOp, Instruction, LoadKind, RegOp, StoreKind};
use super::{decode, MachineState, Mode};
use crate::memory::{MemorySystem, PortRequest, Requester};
use crate::protection::{AccessKind, PmpUnit};

/// Standard RISC-V exception codes used by the model.
pub mod cause {
    pub const INST_ACCESS_FAULT: u32 = 1;
    pub const ILLEGAL_INSTRUCTION: u32 = 2;
    pub const BREAKPOINT: u32 = 3;
    pub const LOAD_MISALIGNED: u32 = 4;
    pub const LOAD_ACCESS_FAULT: u32 = 5;
    pub const STORE_MISALIGNED: u32 = 6;
    pub const STORE_ACCESS_FAULT: u32 = 7;
    pub const ECALL_U: u32 = 8;
    pub const ECALL_M: u32 = 11;
    /// Interrupt flag in `mcause`.
    pub const INTERRUPT: u32 = 1 << 31;
}

/// Per-instruction cycle calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoreTiming {
    /// Penalty for a mispredicted conditional branch.
    pub branch_penalty: u64,
    /// Extra cycles for `jal` (target resolved in decode).
    pub jal_extra: u64,
    /// Extra cycles for `jalr` (target resolved in execute).
    pub jalr_extra: u64,
    pub mul_cycles: u64,
    /// `mulh`, `mulhsu`, `mulhu`.
    pub mulh_cycles: u64,
    /// Iterative divider, all four divide/remainder forms.
    pub div_cycles: u64,
    /// Pipeline refill charged to the first instruction after a trap,
    /// interrupt entry or return redirect.
    pub refill_cycles: u64,
}

impl Default for CoreTiming {
    fn default() -> Self {
        Self {
            branch_penalty: 2,
            jal_extra: 0,
            jalr_extra: 2,
            mul_cycles: 1,
            mulh_cycles: 3,
            div_cycles: 32,
            refill_cycles: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepEvent {
    Retired,
    /// Synchronous exception. Nothing was committed and `pc` still points at
    /// the faulting instruction. `pmp_denied` marks protection violations.
    Exception { cause: u32, tval: u32, pmp_denied: bool },
    /// The following system instructions are left to the caller, which owns
    /// trap, interrupt-return and idle semantics. `pc` is not advanced.
    Ecall,
    Ebreak,
    Uret,
    Mret,
    Wfi,
    /// The instruction costs more than the remaining budget and was aborted
    /// before commit.
    BudgetExhausted { needed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemEffect {
    pub addr: u32,
    pub width: u32,
    pub is_write: bool,
    pub value: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CycleReport {
    pub pc: u32,
    pub inst: Instruction,
    /// Cycles consumed; zero unless the instruction committed.
    pub cycles: u64,
    pub event: StepEvent,
    pub mem: Option<MemEffect>,
}

fn exception(cause: u32, tval: u32, pmp_denied: bool) -> StepEvent {
    StepEvent::Exception { cause, tval, pmp_denied }
}

fn branch_taken(kind: BranchKind, a: u32, b: u32) -> bool {
    match kind {
        BranchKind::Beq => a == b,
        BranchKind::Bne => a != b,
        BranchKind::Blt => (a as i32) < (b as i32),
        BranchKind::Bge => (a as i32) >= (b as i32),
        BranchKind::Bltu => a < b,
        BranchKind::Bgeu => a >= b,
    }
}

fn imm_op(op: ImmOp, a: u32, imm: i32) -> u32 {
    let i = imm as u32;
    match op {
        ImmOp::Addi => a.wrapping_add(i),
        ImmOp::Slti => ((a as i32) < imm) as u32,
        ImmOp::Sltiu => (a < i) as u32,
        ImmOp::Xori => a ^ i,
        ImmOp::Ori => a | i,
        ImmOp::Andi => a & i,
        ImmOp::Slli => a << (i & 31),
        ImmOp::Srli => a >> (i & 31),
        ImmOp::Srai => ((a as i32) >> (i & 31)) as u32,
    }
}

/// ALU result for register-register operations, including the M extension's
/// divide-by-zero and overflow conventions.
pub fn reg_op(op: RegOp, a: u32, b: u32) -> u32 {
    let (sa, sb) = (a as i32, b as i32);
    match op {
        RegOp::Add => a.wrapping_add(b),
        RegOp::Sub => a.wrapping_sub(b),
        RegOp::Sll => a << (b & 31),
        RegOp::Slt => (sa < sb) as u32,
        RegOp::Sltu => (a < b) as u32,
        RegOp::Xor => a ^ b,
        RegOp::Srl => a >> (b & 31),
        RegOp::Sra => (sa >> (b & 31)) as u32,
        RegOp::Or => a | b,
        RegOp::And => a & b,
        RegOp::Mul => a.wrapping_mul(b),
        RegOp::Mulh => ((sa as i64 * sb as i64) >> 32) as u32,
        RegOp::Mulhsu => ((sa as i64 * b as i64) >> 32) as u32,
        RegOp::Mulhu => ((a as u64 * b as u64) >> 32) as u32,
        RegOp::Div => {
            if b == 0 {
                u32::MAX
            } else {
                sa.wrapping_div(sb) as u32
            }
        }
        RegOp::Divu => a.checked_div(b).unwrap_or(u32::MAX),
        RegOp::Rem => {
            if b == 0 {
                a
            } else {
                sa.wrapping_rem(sb) as u32
            }
        }
        RegOp::Remu => a.checked_rem(b).unwrap_or(a),
    }
}

fn op_cycles(op: RegOp, t: &CoreTiming) -> u64 {
    match op {
        RegOp::Mul => t.mul_cycles,
        RegOp::Mulh | RegOp::Mulhsu | RegOp::Mulhu => t.mulh_cycles,
        RegOp::Div | RegOp::Divu | RegOp::Rem | RegOp::Remu => t.div_cycles,
        _ => 1,
    }
}

fn load_extend(kind: LoadKind, raw: u32) -> u32 {
    match kind {
        LoadKind::Lb => raw as u8 as i8 as i32 as u32,
        LoadKind::Lh => raw as u16 as i16 as i32 as u32,
        LoadKind::Lw => raw,
        LoadKind::Lbu => raw & 0xff,
        LoadKind::Lhu => raw & 0xffff,
    }
}

fn csr_access(op: CsrOp, src: CsrSrc, rs_value: u32) -> (CsrAccess, u32, bool) {
    let (value, is_zero_src) = match src {
        CsrSrc::Reg(r) => (rs_value, r == 0),
        CsrSrc::Imm(i) => (i as u32, i == 0),
    };
    match op {
        CsrOp::Rw => (CsrAccess::Write, value, false),
        // csrrs/csrrc with a zero source do not write, so read-only CSRs are fine
        CsrOp::Rs if is_zero_src => (CsrAccess::Read, 0, true),
        CsrOp::Rc if is_zero_src => (CsrAccess::Read, 0, true),
        CsrOp::Rs => (CsrAccess::Set, value, false),
        CsrOp::Rc => (CsrAccess::Clear, value, false),
    }
}

/// Execute one instruction at `state.pc`.
///
/// `budget` limits how many cycles the instruction may take; an instruction
/// that would exceed it is aborted with [`StepEvent::BudgetExhausted`] and
/// leaves no architectural trace. Exceptions likewise commit nothing.
pub fn step(
    state: &mut MachineState,
    mem: &mut MemorySystem,
    pmp: &PmpUnit,
    timing: &CoreTiming,
    budget: Option<u64>,
) -> CycleReport {
    let pc = state.pc;
    let mode = state.mode;
    let mut report = CycleReport { pc, inst: Instruction::Illegal(0), cycles: 0, event: StepEvent::Retired, mem: None };

    if !pmp.check(pc, 4, AccessKind::Exec, mode) {
        report.event = exception(cause::INST_ACCESS_FAULT, pc, true);
        return report;
    }
    let word = match mem.peek(pc) {
        Ok(w) => w,
        Err(_) => {
            report.event = exception(cause::INST_ACCESS_FAULT, pc, false);
            return report;
        }
    };
    let inst = decode(word);
    report.inst = inst;

    let refill = if state.refill_pending { timing.refill_cycles } else { 0 };
    let start = state.cycle + refill;
    let mut next_pc = pc.wrapping_add(4);

    // Work out cost and effects without committing anything.
    enum Commit {
        None,
        Reg(u8, u32),
        Load { rd: u8, kind: LoadKind, req: PortRequest },
        Store { req: PortRequest, value: u32 },
        Csr { rd: u8, csr: u16, access: CsrAccess, value: u32 },
    }
    let mut commit = Commit::None;
    let mut cycles = 1u64;

    match inst {
        Instruction::Lui { rd, imm } => commit = Commit::Reg(rd, imm),
        Instruction::Auipc { rd, imm } => commit = Commit::Reg(rd, pc.wrapping_add(imm)),
        Instruction::Jal { rd, offset } => {
            cycles += timing.jal_extra;
            next_pc = pc.wrapping_add(offset as u32);
            commit = Commit::Reg(rd, pc.wrapping_add(4));
        }
        Instruction::Jalr { rd, rs1, offset } => {
            cycles += timing.jalr_extra;
            next_pc = state.reg(rs1).wrapping_add(offset as u32) & !1;
            commit = Commit::Reg(rd, pc.wrapping_add(4));
        }
        Instruction::Branch { kind, rs1, rs2, offset } => {
            let taken = branch_taken(kind, state.reg(rs1), state.reg(rs2));
            let predicted_taken = offset < 0;
            if taken != predicted_taken {
                cycles += timing.branch_penalty;
            }
            if taken {
                next_pc = pc.wrapping_add(offset as u32);
            }
        }
        Instruction::Load { kind, rd, rs1, offset } => {
            let addr = state.reg(rs1).wrapping_add(offset as u32);
            let width = kind.width();
            if !addr.is_multiple_of(width) {
                report.event = exception(cause::LOAD_MISALIGNED, addr, false);
                return report;
            }
            if !pmp.check(addr, width, AccessKind::Read, mode) {
                report.event = exception(cause::LOAD_ACCESS_FAULT, addr, true);
                return report;
            }
            let req = PortRequest::single(Requester::CoreData, addr, width, false, start);
            match mem.predict(&req) {
                Ok(done) => cycles += done - start,
                Err(_) => {
                    report.event = exception(cause::LOAD_ACCESS_FAULT, addr, false);
                    return report;
                }
            }
            commit = Commit::Load { rd, kind, req };
        }
        Instruction::Store { kind, rs1, rs2, offset } => {
            let addr = state.reg(rs1).wrapping_add(offset as u32);
            let width = kind.width();
            if !addr.is_multiple_of(width) {
                report.event = exception(cause::STORE_MISALIGNED, addr, false);
                return report;
            }
            if !pmp.check(addr, width, AccessKind::Write, mode) {
                report.event = exception(cause::STORE_ACCESS_FAULT, addr, true);
                return report;
            }
            let req = PortRequest::single(Requester::CoreData, addr, width, true, start);
            match mem.predict(&req) {
                Ok(done) => cycles += done - start,
                Err(_) => {
                    report.event = exception(cause::STORE_ACCESS_FAULT, addr, false);
                    return report;
                }
            }
            let mask = match kind {
                StoreKind::Sb => 0xff,
                StoreKind::Sh => 0xffff,
                StoreKind::Sw => u32::MAX,
            };
            commit = Commit::Store { req, value: state.reg(rs2) & mask };
        }
        Instruction::OpImm { op, rd, rs1, imm } => commit = Commit::Reg(rd, imm_op(op, state.reg(rs1), imm)),
        Instruction::Op { op, rd, rs1, rs2 } => {
            cycles = op_cycles(op, timing);
            commit = Commit::Reg(rd, reg_op(op, state.reg(rs1), state.reg(rs2)));
        }
        Instruction::Csr { op, rd, src, csr } => {
            let rs_value = match src {
                CsrSrc::Reg(r) => state.reg(r),
                CsrSrc::Imm(_) => 0,
            };
            let (access, value, _) = csr_access(op, src, rs_value);
            // Probe the access on a scratch copy so faults commit nothing.
            let mut probe = state.csrs.clone();
            if probe.access(mode, start, csr, access, value).is_err() {
                report.event = exception(cause::ILLEGAL_INSTRUCTION, word, false);
                return report;
            }
            commit = Commit::Csr { rd, csr, access, value };
        }
        Instruction::Fence => {}
        Instruction::Ecall => {
            report.event = StepEvent::Ecall;
            return report;
        }
        Instruction::Ebreak => {
            report.event = StepEvent::Ebreak;
            return report;
        }
        Instruction::Uret => {
            report.event = StepEvent::Uret;
            return report;
        }
        Instruction::Mret => {
            if mode != Mode::Machine {
                report.event = exception(cause::ILLEGAL_INSTRUCTION, word, false);
            } else {
                report.event = StepEvent::Mret;
            }
            return report;
        }
        Instruction::Wfi => {
            report.event = StepEvent::Wfi;
            return report;
        }
        Instruction::Illegal(w) => {
            report.event = exception(cause::ILLEGAL_INSTRUCTION, w, false);
            return report;
        }
    }

    if !next_pc.is_multiple_of(4) {
        report.event = exception(cause::INST_ACCESS_FAULT, next_pc, false);
        return report;
    }
    let total = refill + cycles;
    if let Some(limit) = budget {
        if total > limit {
            report.event = StepEvent::BudgetExhausted { needed: total };
            return report;
        }
    }

    match commit {
        Commit::None => {}
        Commit::Reg(rd, v) => state.set_reg(rd, v),
        Commit::Load { rd, kind, req } => {
            let (raw, _) = mem.access(req, 0).expect("load was validated before commit");
            state.set_reg(rd, load_extend(kind, raw));
            report.mem = Some(MemEffect { addr: req.addr, width: req.width, is_write: false, value: raw });
        }
        Commit::Store { req, value } => {
            mem.access(req, value).expect("store was validated before commit");
            report.mem = Some(MemEffect { addr: req.addr, width: req.width, is_write: true, value });
        }
        Commit::Csr { rd, csr, access, value } => {
            let old = state.csrs.access(mode, start, csr, access, value).expect("csr access was validated");
            state.set_reg(rd, old);
        }
    }
    state.pc = next_pc;
    state.refill_pending = false;
    state.cycle += total;
    report.cycles = total;
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::csr::CsrFile;
    use crate::isa::encode;
    use crate::memory::{BusTiming, MemoryMap, FLASH_BASE, SRAM_BASE};

    fn setup(prog: &[Instruction]) -> (MachineState, MemorySystem, PmpUnit) {
        let mut mem = MemorySystem::new(MemoryMap::standard(false, false), BusTiming::default());
        for (i, inst) in prog.iter().enumerate() {
            mem.poke(FLASH_BASE + 4 * i as u32, encode(inst)).unwrap();
        }
        (MachineState::new(CsrFile::baseline(), FLASH_BASE), mem, PmpUnit::new(4))
    }

    fn run1(prog: &[Instruction]) -> (MachineState, CycleReport) {
        let (mut s, mut m, p) = setup(prog);
        s.set_reg(2, SRAM_BASE);
        let r = step(&mut s, &mut m, &p, &CoreTiming::default(), None);
        (s, r)
    }

    #[test]
    fn addi_one_cycle() {
        let (s, r) = run1(&[Instruction::OpImm { op: ImmOp::Addi, rd: 1, rs1: 0, imm: 5 }]);
        assert_eq!(r.cycles, 1);
        assert_eq!(s.reg(1), 5);
    }

    #[test]
    fn backward_taken_branch_is_predicted() {
        let (mut s, mut m, p) = setup(&[
            Instruction::OpImm { op: ImmOp::Addi, rd: 0, rs1: 0, imm: 0 },
            Instruction::Branch { kind: BranchKind::Beq, rs1: 0, rs2: 0, offset: -4 },
        ]);
        s.pc = 4;
        let r = step(&mut s, &mut m, &p, &CoreTiming::default(), None);
        assert_eq!((r.cycles, s.pc), (1, 0));
    }

    #[test]
    fn forward_taken_branch_mispredicts() {
        let (_, r) = run1(&[Instruction::Branch { kind: BranchKind::Beq, rs1: 0, rs2: 0, offset: 8 }]);
        assert_eq!(r.cycles, 3);
    }

    #[test]
    fn sram_load_costs_port_latency() {
        let (s, r) = run1(&[Instruction::Load { kind: LoadKind::Lw, rd: 1, rs1: 2, offset: 0 }]);
        assert_eq!(r.cycles, 1 + 2);
        assert_eq!(s.cycle, 3);
    }

    #[test]
    fn div_by_zero_conventions() {
        assert_eq!(reg_op(RegOp::Div, 7, 0), u32::MAX);
        assert_eq!(reg_op(RegOp::Remu, 7, 0), 7);
        assert_eq!(reg_op(RegOp::Div, i32::MIN as u32, u32::MAX), i32::MIN as u32);
        assert_eq!(reg_op(RegOp::Rem, i32::MIN as u32, u32::MAX), 0);
        assert_eq!(reg_op(RegOp::Mulh, u32::MAX, u32::MAX), 0);
    }

    #[test]
    fn budget_aborts_without_commit() {
        let (mut s, mut m, p) = setup(&[Instruction::Op { op: RegOp::Div, rd: 1, rs1: 0, rs2: 0 }]);
        let r = step(&mut s, &mut m, &p, &CoreTiming::default(), Some(10));
        assert_eq!(r.event, StepEvent::BudgetExhausted { needed: 32 });
        assert_eq!((s.pc, s.cycle, s.reg(1)), (0, 0, 0));
    }

    #[test]
    fn user_pmp_denial_commits_nothing() {
        let (mut s, mut m, mut p) = setup(&[Instruction::Store { kind: StoreKind::Sw, rs1: 2, rs2: 3, offset: 0 }]);
        p.active = crate::protection::PmpSet::from_entries(
            4,
            1,
            &[crate::protection::PmpEntry::new(FLASH_BASE, FLASH_BASE + 0x100, crate::protection::PERM_X)],
        );
        s.mode = Mode::User;
        s.set_reg(2, SRAM_BASE);
        s.set_reg(3, 0xdead);
        let r = step(&mut s, &mut m, &p, &CoreTiming::default(), None);
        assert_eq!(r.event, exception(cause::STORE_ACCESS_FAULT, SRAM_BASE, true));
        assert_eq!(m.peek(SRAM_BASE).unwrap(), 0);
    }

    #[test]
    fn refill_charged_once() {
        let (mut s, mut m, p) = setup(&[Instruction::OpImm { op: ImmOp::Addi, rd: 1, rs1: 0, imm: 1 }; 2]);
        s.refill_pending = true;
        let t = CoreTiming::default();
        assert_eq!(step(&mut s, &mut m, &p, &t, None).cycles, 3);
        assert_eq!(step(&mut s, &mut m, &p, &t, None).cycles, 1);
    }
}
