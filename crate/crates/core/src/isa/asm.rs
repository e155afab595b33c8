//! A small two-pass RV32IM assembler.
//!
//! Supported syntax:
//!
//! * one statement per line, `#` or `;` starts a comment;
//! * `label:` definitions, optionally followed by a statement;
//! * directives `.org ADDR`, `.word EXPR[, EXPR...]`, `.space BYTES`,
//!   `.equ NAME, EXPR`, `.align BYTES`;
//! * registers as `x0`..`x31` or ABI names;
//! * expressions are `term (+|- term)*` over integers, symbols, `%hi(e)` and
//!   `%lo(e)`;
//! * branch and `jal` targets given as a symbol are pc-relative; a bare
//!   integer is taken as the raw offset;
//! * pseudo-instructions `nop li la mv not neg j jr ret call beqz bnez bltz
//!   bgez blez bgtz bgt ble bgtu bleu seqz snez csrr csrw csrs csrc csrwi`.
//!
//! `li` with a literal that fits 12 bits is one word, otherwise `li` and `la`
//! are always a `lui`/`addi` pair so sizes are known in the first pass.

use std::collections::BTreeMap;

use thiserror::Error;

use super::csr;
use super::inst::{BranchKind, CsrOp, CsrSrc, ImmOp, Instruction, LoadKind, RegOp, StoreKind};
use super::{encode, Reg};
use crate::memory::{BusFault, MemorySystem};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AsmErrorKind {
    #[error("unknown mnemonic `{0}`")]
    UnknownMnemonic(String),
    #[error("immediate {value} out of range for {bits}-bit field")]
    ImmediateOutOfRange { value: i64, bits: u32 },
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("undefined symbol `{0}`")]
    UndefinedSymbol(String),
    #[error("bad operand `{0}`")]
    BadOperand(String),
    #[error("`{mnemonic}` expects {expected} operands, got {got}")]
    OperandCount { mnemonic: String, expected: usize, got: usize },
    #[error("unknown directive `{0}`")]
    UnknownDirective(String),
    #[error(".org {0:#x} moves backwards")]
    OrgBackwards(u32),
    #[error("misaligned target offset {0}")]
    MisalignedTarget(i64),
    #[error("program is empty")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {kind}")]
pub struct AsmError {
    pub line: usize,
    pub kind: AsmErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProgramImage {
    pub origin: u32,
    pub words: Vec<u32>,
    pub symbols: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ImageError {
    #[error("binary image length {0} is not a multiple of 4")]
    Length(usize),
    #[error("origin {0:#x} is not word aligned")]
    Origin(u32),
    #[error("image is empty")]
    Empty,
}

impl ProgramImage {
    /// Raw binary image: consecutive little-endian words loaded at `origin`.
    pub fn from_binary(origin: u32, bytes: &[u8]) -> Result<Self, ImageError> {
        if !origin.is_multiple_of(4) {
            return Err(ImageError::Origin(origin));
        }
        if bytes.is_empty() {
            return Err(ImageError::Empty);
        }
        if !bytes.len().is_multiple_of(4) {
            return Err(ImageError::Length(bytes.len()));
        }
        let words = bytes.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok(Self { origin, words, symbols: BTreeMap::new() })
    }

    pub fn end(&self) -> u32 {
        self.origin + 4 * self.words.len() as u32
    }

    pub fn symbol(&self, name: &str) -> Option<u32> {
        self.symbols.get(name).copied()
    }

    /// Copy the image into memory without charging cycles.
    pub fn load_into(&self, mem: &mut MemorySystem) -> Result<(), BusFault> {
        mem.write_words(self.origin, &self.words)
    }

    pub fn to_binary(&self) -> Vec<u8> {
        self.words.iter().flat_map(|w| w.to_le_bytes()).collect()
    }
}

const ABI: [&str; 32] = [
    "zero", "ra", "sp", "gp", "tp", "t0", "t1", "t2", "s0", "s1", "a0", "a1", "a2", "a3", "a4", "a5", "a6", "a7",
    "s2", "s3", "s4", "s5", "s6", "s7", "s8", "s9", "s10", "s11", "t3", "t4", "t5", "t6",
];

fn parse_reg(s: &str) -> Option<Reg> {
    let s = s.trim();
    if let Some(n) = s.strip_prefix('x') {
        if let Ok(n) = n.parse::<u8>() {
            return (n < 32).then_some(n);
        }
    }
    if s == "fp" {
        return Some(8);
    }
    ABI.iter().position(|&a| a == s).map(|i| i as Reg)
}

fn csr_by_name(s: &str) -> Option<u16> {
    let fixed = match s {
        "mstatus" => csr::MSTATUS,
        "mtvec" => csr::MTVEC,
        "mscratch" => csr::MSCRATCH,
        "mepc" => csr::MEPC,
        "mcause" => csr::MCAUSE,
        "mtval" => csr::MTVAL,
        "muictl" => csr::MUICTL,
        "muistk" => csr::MUISTK,
        "muiepc" => csr::MUIEPC,
        "muicause" => csr::MUICAUSE,
        "mtimecmp" => csr::MTIMECMP,
        "mtimecmph" => csr::MTIMECMPH,
        "cycle" => csr::CYCLE,
        "cycleh" => csr::CYCLEH,
        "time" => csr::TIME,
        "timeh" => csr::TIMEH,
        _ => {
            for (prefix, base) in [("iidnum", csr::IIDNUM_BASE), ("iidpmp", csr::IIDPMP_BASE), ("iidtim", csr::IIDTIM_BASE)] {
                if let Some(n) = s.strip_prefix(prefix).and_then(|n| n.parse::<u16>().ok()) {
                    if (n as usize) < csr::MAX_CAM_ENTRIES {
                        return Some(base + n);
                    }
                }
            }
            return None;
        }
    };
    Some(fixed)
}

fn parse_int(s: &str) -> Option<i64> {
    let s = s.trim();
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s),
    };
    let v = if let Some(h) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i64::from_str_radix(&h.replace('_', ""), 16).ok()?
    } else if let Some(b) = body.strip_prefix("0b") {
        i64::from_str_radix(&b.replace('_', ""), 2).ok()?
    } else if body.len() == 3 && body.starts_with('\'') && body.ends_with('\'') {
        body.as_bytes()[1] as i64
    } else {
        body.replace('_', "").parse::<i64>().ok()?
    };
    Some(if neg { -v } else { v })
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '.')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

/// Split at top-level commas (parentheses in `%hi(x)` stay intact).
fn split_operands(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0;
    let mut cur = String::new();
    for c in s.chars() {
        match c {
            '(' => {
                depth += 1;
                cur.push(c)
            }
            ')' => {
                depth -= 1;
                cur.push(c)
            }
            ',' if depth == 0 => out.push(std::mem::take(&mut cur).trim().to_string()),
            _ => cur.push(c),
        }
    }
    if !cur.trim().is_empty() || !out.is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

struct Ctx<'a> {
    symbols: &'a BTreeMap<String, u32>,
    /// First pass: unresolved symbols evaluate to 0.
    lenient: bool,
}

impl Ctx<'_> {
    fn eval(&self, expr: &str) -> Result<i64, AsmErrorKind> {
        let expr = expr.trim();
        if expr.is_empty() {
            return Err(AsmErrorKind::BadOperand(expr.into()));
        }
        // Tokenize into signed terms.
        let mut total = 0i64;
        let mut sign = 1i64;
        let mut term = String::new();
        let mut depth = 0;
        let flush = |term: &mut String, sign: i64, total: &mut i64| -> Result<(), AsmErrorKind> {
            let t = term.trim().to_string();
            term.clear();
            if t.is_empty() {
                return Err(AsmErrorKind::BadOperand(expr.into()));
            }
            *total += sign * self.term(&t)?;
            Ok(())
        };
        for (i, c) in expr.char_indices() {
            match c {
                '(' => {
                    depth += 1;
                    term.push(c)
                }
                ')' => {
                    depth -= 1;
                    term.push(c)
                }
                '+' | '-' if depth == 0 => {
                    if term.trim().is_empty() && i == 0 {
                        if c == '-' {
                            sign = -sign;
                        }
                        continue;
                    }
                    flush(&mut term, sign, &mut total)?;
                    sign = if c == '-' { -1 } else { 1 };
                }
                _ => term.push(c),
            }
        }
        flush(&mut term, sign, &mut total)?;
        Ok(total)
    }

    fn term(&self, t: &str) -> Result<i64, AsmErrorKind> {
        if let Some(v) = parse_int(t) {
            return Ok(v);
        }
        for (prefix, hi) in [("%hi(", true), ("%lo(", false)] {
            if let Some(inner) = t.strip_prefix(prefix).and_then(|r| r.strip_suffix(')')) {
                let v = self.eval(inner)? as u32;
                let (h, l) = split_hi_lo(v);
                return Ok(if hi { h as i64 } else { l as i64 });
            }
        }
        if is_ident(t) {
            return match self.symbols.get(t) {
                Some(&v) => Ok(v as i64),
                None if self.lenient => Ok(0),
                None => Err(AsmErrorKind::UndefinedSymbol(t.into())),
            };
        }
        Err(AsmErrorKind::BadOperand(t.into()))
    }
}

/// Split a 32-bit constant into a `lui` upper value and a signed 12-bit low part.
pub fn split_hi_lo(v: u32) -> (u32, i32) {
    let lo = ((v & 0xfff) as i32) << 20 >> 20;
    let hi = v.wrapping_sub(lo as u32) >> 12;
    (hi, lo)
}

fn check_signed(v: i64, bits: u32) -> Result<i32, AsmErrorKind> {
    let min = -(1i64 << (bits - 1));
    let max = (1i64 << (bits - 1)) - 1;
    if v < min || v > max {
        Err(AsmErrorKind::ImmediateOutOfRange { value: v, bits })
    } else {
        Ok(v as i32)
    }
}

fn reg(s: &str) -> Result<Reg, AsmErrorKind> {
    parse_reg(s).ok_or_else(|| AsmErrorKind::BadOperand(s.into()))
}

fn want(m: &str, ops: &[String], n: usize) -> Result<(), AsmErrorKind> {
    if ops.len() != n {
        return Err(AsmErrorKind::OperandCount { mnemonic: m.into(), expected: n, got: ops.len() });
    }
    Ok(())
}

/// Parse `offset(reg)`; an empty offset means 0.
fn mem_operand(ctx: &Ctx, s: &str) -> Result<(i32, Reg), AsmErrorKind> {
    let s = s.trim();
    let open = s.rfind('(').ok_or_else(|| AsmErrorKind::BadOperand(s.into()))?;
    let inner = s[open + 1..].strip_suffix(')').ok_or_else(|| AsmErrorKind::BadOperand(s.into()))?;
    let off_str = s[..open].trim();
    let off = if off_str.is_empty() { 0 } else { ctx.eval(off_str)? };
    Ok((check_signed(off, 12)?, reg(inner)?))
}

fn branch_kind(m: &str) -> Option<BranchKind> {
    Some(match m {
        "beq" => BranchKind::Beq,
        "bne" => BranchKind::Bne,
        "blt" => BranchKind::Blt,
        "bge" => BranchKind::Bge,
        "bltu" => BranchKind::Bltu,
        "bgeu" => BranchKind::Bgeu,
        _ => return None,
    })
}

fn load_kind(m: &str) -> Option<LoadKind> {
    Some(match m {
        "lb" => LoadKind::Lb,
        "lh" => LoadKind::Lh,
        "lw" => LoadKind::Lw,
        "lbu" => LoadKind::Lbu,
        "lhu" => LoadKind::Lhu,
        _ => return None,
    })
}

fn store_kind(m: &str) -> Option<StoreKind> {
    Some(match m {
        "sb" => StoreKind::Sb,
        "sh" => StoreKind::Sh,
        "sw" => StoreKind::Sw,
        _ => return None,
    })
}

fn imm_op(m: &str) -> Option<ImmOp> {
    Some(match m {
        "addi" => ImmOp::Addi,
        "slti" => ImmOp::Slti,
        "sltiu" => ImmOp::Sltiu,
        "xori" => ImmOp::Xori,
        "ori" => ImmOp::Ori,
        "andi" => ImmOp::Andi,
        "slli" => ImmOp::Slli,
        "srli" => ImmOp::Srli,
        "srai" => ImmOp::Srai,
        _ => return None,
    })
}

fn reg_op(m: &str) -> Option<RegOp> {
    Some(match m {
        "add" => RegOp::Add,
        "sub" => RegOp::Sub,
        "sll" => RegOp::Sll,
        "slt" => RegOp::Slt,
        "sltu" => RegOp::Sltu,
        "xor" => RegOp::Xor,
        "srl" => RegOp::Srl,
        "sra" => RegOp::Sra,
        "or" => RegOp::Or,
        "and" => RegOp::And,
        "mul" => RegOp::Mul,
        "mulh" => RegOp::Mulh,
        "mulhsu" => RegOp::Mulhsu,
        "mulhu" => RegOp::Mulhu,
        "div" => RegOp::Div,
        "divu" => RegOp::Divu,
        "rem" => RegOp::Rem,
        "remu" => RegOp::Remu,
        _ => return None,
    })
}

fn csr_op(m: &str) -> Option<(CsrOp, bool)> {
    Some(match m {
        "csrrw" => (CsrOp::Rw, false),
        "csrrs" => (CsrOp::Rs, false),
        "csrrc" => (CsrOp::Rc, false),
        "csrrwi" => (CsrOp::Rw, true),
        "csrrsi" => (CsrOp::Rs, true),
        "csrrci" => (CsrOp::Rc, true),
        _ => return None,
    })
}

fn csr_number(ctx: &Ctx, s: &str) -> Result<u16, AsmErrorKind> {
    if let Some(n) = csr_by_name(s.trim()) {
        return Ok(n);
    }
    let v = ctx.eval(s)?;
    if !(0..4096).contains(&v) {
        return Err(AsmErrorKind::ImmediateOutOfRange { value: v, bits: 12 });
    }
    Ok(v as u16)
}

fn uimm5(v: i64) -> Result<u8, AsmErrorKind> {
    if !(0..32).contains(&v) {
        return Err(AsmErrorKind::ImmediateOutOfRange { value: v, bits: 5 });
    }
    Ok(v as u8)
}

/// A branch/jump target: symbols are resolved pc-relative, plain integers are
/// offsets.
fn target(ctx: &Ctx, s: &str, pc: u32, bits: u32) -> Result<i32, AsmErrorKind> {
    let off = match parse_int(s) {
        Some(v) => v,
        None => {
            let abs = ctx.eval(s)?;
            if ctx.lenient {
                0
            } else {
                abs - pc as i64
            }
        }
    };
    if off % 2 != 0 {
        return Err(AsmErrorKind::MisalignedTarget(off));
    }
    check_signed(off, bits)
}

/// Number of words a statement occupies, decided in the first pass.
fn statement_size(m: &str, ops: &[String]) -> usize {
    match m {
        "la" => 2,
        "li" => match ops.get(1).and_then(|s| parse_int(s)) {
            Some(v) if (-2048..2048).contains(&v) => 1,
            _ => 2,
        },
        "call" | "tail" => 1,
        _ => 1,
    }
}

fn expand(ctx: &Ctx, m: &str, ops: &[String], pc: u32) -> Result<Vec<Instruction>, AsmErrorKind> {
    use Instruction as I;
    let addi = |rd, rs1, imm| I::OpImm { op: ImmOp::Addi, rd, rs1, imm };
    if let Some(kind) = branch_kind(m) {
        want(m, ops, 3)?;
        return Ok(vec![I::Branch { kind, rs1: reg(&ops[0])?, rs2: reg(&ops[1])?, offset: target(ctx, &ops[2], pc, 13)? }]);
    }
    if let Some(kind) = load_kind(m) {
        want(m, ops, 2)?;
        let (offset, rs1) = mem_operand(ctx, &ops[1])?;
        return Ok(vec![I::Load { kind, rd: reg(&ops[0])?, rs1, offset }]);
    }
    if let Some(kind) = store_kind(m) {
        want(m, ops, 2)?;
        let (offset, rs1) = mem_operand(ctx, &ops[1])?;
        return Ok(vec![I::Store { kind, rs1, rs2: reg(&ops[0])?, offset }]);
    }
    if let Some(op) = imm_op(m) {
        want(m, ops, 3)?;
        let v = ctx.eval(&ops[2])?;
        let imm = match op {
            ImmOp::Slli | ImmOp::Srli | ImmOp::Srai => uimm5(v)? as i32,
            _ => check_signed(v, 12)?,
        };
        return Ok(vec![I::OpImm { op, rd: reg(&ops[0])?, rs1: reg(&ops[1])?, imm }]);
    }
    if let Some(op) = reg_op(m) {
        want(m, ops, 3)?;
        return Ok(vec![I::Op { op, rd: reg(&ops[0])?, rs1: reg(&ops[1])?, rs2: reg(&ops[2])? }]);
    }
    if let Some((op, is_imm)) = csr_op(m) {
        want(m, ops, 3)?;
        let csr = csr_number(ctx, &ops[1])?;
        let src = if is_imm { CsrSrc::Imm(uimm5(ctx.eval(&ops[2])?)?) } else { CsrSrc::Reg(reg(&ops[2])?) };
        return Ok(vec![I::Csr { op, rd: reg(&ops[0])?, src, csr }]);
    }
    let upper = |s: &str| -> Result<u32, AsmErrorKind> {
        let v = ctx.eval(s)?;
        if !(0..=0xfffff).contains(&v) {
            return Err(AsmErrorKind::ImmediateOutOfRange { value: v, bits: 20 });
        }
        Ok((v as u32) << 12)
    };
    Ok(match m {
        "lui" => {
            want(m, ops, 2)?;
            vec![I::Lui { rd: reg(&ops[0])?, imm: upper(&ops[1])? }]
        }
        "auipc" => {
            want(m, ops, 2)?;
            vec![I::Auipc { rd: reg(&ops[0])?, imm: upper(&ops[1])? }]
        }
        "jal" => match ops.len() {
            1 => vec![I::Jal { rd: 1, offset: target(ctx, &ops[0], pc, 21)? }],
            _ => {
                want(m, ops, 2)?;
                vec![I::Jal { rd: reg(&ops[0])?, offset: target(ctx, &ops[1], pc, 21)? }]
            }
        },
        "jalr" => match ops.len() {
            1 => vec![I::Jalr { rd: 1, rs1: reg(&ops[0])?, offset: 0 }],
            _ => {
                want(m, ops, 2)?;
                let (offset, rs1) = mem_operand(ctx, &ops[1])?;
                vec![I::Jalr { rd: reg(&ops[0])?, rs1, offset }]
            }
        },
        "fence" => vec![I::Fence],
        "ecall" => vec![I::Ecall],
        "ebreak" => vec![I::Ebreak],
        "uret" => vec![I::Uret],
        "mret" => vec![I::Mret],
        "wfi" => vec![I::Wfi],
        "nop" => {
            want(m, ops, 0)?;
            vec![addi(0, 0, 0)]
        }
        "li" | "la" => {
            want(m, ops, 2)?;
            let rd = reg(&ops[0])?;
            let v = ctx.eval(&ops[1])?;
            if !(i32::MIN as i64..=u32::MAX as i64).contains(&v) {
                return Err(AsmErrorKind::ImmediateOutOfRange { value: v, bits: 32 });
            }
            if statement_size(m, ops) == 1 {
                vec![addi(rd, 0, v as i32)]
            } else {
                let (hi, lo) = split_hi_lo(v as u32);
                vec![I::Lui { rd, imm: hi << 12 }, addi(rd, rd, lo)]
            }
        }
        "mv" => {
            want(m, ops, 2)?;
            vec![addi(reg(&ops[0])?, reg(&ops[1])?, 0)]
        }
        "not" => {
            want(m, ops, 2)?;
            vec![I::OpImm { op: ImmOp::Xori, rd: reg(&ops[0])?, rs1: reg(&ops[1])?, imm: -1 }]
        }
        "neg" => {
            want(m, ops, 2)?;
            vec![I::Op { op: RegOp::Sub, rd: reg(&ops[0])?, rs1: 0, rs2: reg(&ops[1])? }]
        }
        "seqz" => {
            want(m, ops, 2)?;
            vec![I::OpImm { op: ImmOp::Sltiu, rd: reg(&ops[0])?, rs1: reg(&ops[1])?, imm: 1 }]
        }
        "snez" => {
            want(m, ops, 2)?;
            vec![I::Op { op: RegOp::Sltu, rd: reg(&ops[0])?, rs1: 0, rs2: reg(&ops[1])? }]
        }
        "j" => {
            want(m, ops, 1)?;
            vec![I::Jal { rd: 0, offset: target(ctx, &ops[0], pc, 21)? }]
        }
        "call" => {
            want(m, ops, 1)?;
            vec![I::Jal { rd: 1, offset: target(ctx, &ops[0], pc, 21)? }]
        }
        "jr" => {
            want(m, ops, 1)?;
            vec![I::Jalr { rd: 0, rs1: reg(&ops[0])?, offset: 0 }]
        }
        "ret" => {
            want(m, ops, 0)?;
            vec![I::Jalr { rd: 0, rs1: 1, offset: 0 }]
        }
        "beqz" | "bnez" | "bltz" | "bgez" => {
            want(m, ops, 2)?;
            let kind = match m {
                "beqz" => BranchKind::Beq,
                "bnez" => BranchKind::Bne,
                "bltz" => BranchKind::Blt,
                _ => BranchKind::Bge,
            };
            vec![I::Branch { kind, rs1: reg(&ops[0])?, rs2: 0, offset: target(ctx, &ops[1], pc, 13)? }]
        }
        "blez" | "bgtz" => {
            want(m, ops, 2)?;
            let kind = if m == "blez" { BranchKind::Bge } else { BranchKind::Blt };
            vec![I::Branch { kind, rs1: 0, rs2: reg(&ops[0])?, offset: target(ctx, &ops[1], pc, 13)? }]
        }
        "bgt" | "ble" | "bgtu" | "bleu" => {
            want(m, ops, 3)?;
            let kind = match m {
                "bgt" => BranchKind::Blt,
                "ble" => BranchKind::Bge,
                "bgtu" => BranchKind::Bltu,
                _ => BranchKind::Bgeu,
            };
            vec![I::Branch { kind, rs1: reg(&ops[1])?, rs2: reg(&ops[0])?, offset: target(ctx, &ops[2], pc, 13)? }]
        }
        "csrr" => {
            want(m, ops, 2)?;
            vec![I::Csr { op: CsrOp::Rs, rd: reg(&ops[0])?, src: CsrSrc::Reg(0), csr: csr_number(ctx, &ops[1])? }]
        }
        "csrw" | "csrs" | "csrc" => {
            want(m, ops, 2)?;
            let op = match m {
                "csrw" => CsrOp::Rw,
                "csrs" => CsrOp::Rs,
                _ => CsrOp::Rc,
            };
            vec![I::Csr { op, rd: 0, src: CsrSrc::Reg(reg(&ops[1])?), csr: csr_number(ctx, &ops[0])? }]
        }
        "csrwi" | "csrsi" | "csrci" => {
            want(m, ops, 2)?;
            let op = match m {
                "csrwi" => CsrOp::Rw,
                "csrsi" => CsrOp::Rs,
                _ => CsrOp::Rc,
            };
            let v = uimm5(ctx.eval(&ops[1])?)?;
            vec![I::Csr { op, rd: 0, src: CsrSrc::Imm(v), csr: csr_number(ctx, &ops[0])? }]
        }
        _ => return Err(AsmErrorKind::UnknownMnemonic(m.into())),
    })
}

enum Stmt {
    Inst { mnemonic: String, ops: Vec<String> },
    Words(Vec<String>),
}

struct Line {
    number: usize,
    addr: u32,
    stmt: Stmt,
}

fn strip_comment(line: &str) -> &str {
    let mut in_char = false;
    for (i, c) in line.char_indices() {
        match c {
            '\'' => in_char = !in_char,
            '#' | ';' if !in_char => return &line[..i],
            _ => {}
        }
    }
    line
}

/// Assemble `source` for loading at `origin`.
pub fn assemble_at(source: &str, origin: u32) -> Result<ProgramImage, AsmError> {
    let mut symbols: BTreeMap<String, u32> = BTreeMap::new();
    let mut lines = Vec::new();
    let mut addr = origin;
    let err = |line: usize, kind| AsmError { line, kind };

    // Pass 1: addresses and symbols.
    for (idx, raw) in source.lines().enumerate() {
        let number = idx + 1;
        let mut text = strip_comment(raw).trim();
        while let Some(colon) = text.find(':') {
            let label = text[..colon].trim();
            if !is_ident(label) {
                break;
            }
            if symbols.insert(label.to_string(), addr).is_some() {
                return Err(err(number, AsmErrorKind::DuplicateLabel(label.into())));
            }
            text = text[colon + 1..].trim();
        }
        if text.is_empty() {
            continue;
        }
        let (head, rest) = match text.find(char::is_whitespace) {
            Some(i) => (&text[..i], text[i..].trim()),
            None => (text, ""),
        };
        let head = head.to_ascii_lowercase();
        let ops = split_operands(rest);
        let ctx = Ctx { symbols: &symbols, lenient: false };
        match head.as_str() {
            ".org" => {
                let target = ctx.eval(rest).map_err(|k| err(number, k))? as u32;
                if target < addr {
                    return Err(err(number, AsmErrorKind::OrgBackwards(target)));
                }
                if !target.is_multiple_of(4) {
                    return Err(err(number, AsmErrorKind::BadOperand(rest.into())));
                }
                let pad = (target - addr) / 4;
                if pad > 0 {
                    lines.push(Line { number, addr, stmt: Stmt::Words(vec!["0".into(); pad as usize]) });
                }
                addr = target;
            }
            ".align" => {
                let a = ctx.eval(rest).map_err(|k| err(number, k))? as u32;
                if a == 0 || !a.is_power_of_two() || a < 4 {
                    return Err(err(number, AsmErrorKind::BadOperand(rest.into())));
                }
                let target = addr.div_ceil(a) * a;
                let pad = (target - addr) / 4;
                if pad > 0 {
                    lines.push(Line { number, addr, stmt: Stmt::Words(vec!["0".into(); pad as usize]) });
                }
                addr = target;
            }
            ".space" => {
                let n = ctx.eval(rest).map_err(|k| err(number, k))?;
                if n < 0 || n % 4 != 0 {
                    return Err(err(number, AsmErrorKind::BadOperand(rest.into())));
                }
                lines.push(Line { number, addr, stmt: Stmt::Words(vec!["0".into(); n as usize / 4]) });
                addr += n as u32;
            }
            ".word" => {
                if ops.is_empty() {
                    return Err(err(number, AsmErrorKind::OperandCount { mnemonic: head, expected: 1, got: 0 }));
                }
                addr += 4 * ops.len() as u32;
                lines.push(Line { number, addr: addr - 4 * ops.len() as u32, stmt: Stmt::Words(ops) });
            }
            ".equ" | ".set" => {
                if ops.len() != 2 {
                    return Err(err(number, AsmErrorKind::OperandCount { mnemonic: head, expected: 2, got: ops.len() }));
                }
                let v = ctx.eval(&ops[1]).map_err(|k| err(number, k))?;
                if symbols.insert(ops[0].clone(), v as u32).is_some() {
                    return Err(err(number, AsmErrorKind::DuplicateLabel(ops[0].clone())));
                }
            }
            d if d.starts_with('.') => return Err(err(number, AsmErrorKind::UnknownDirective(d.into()))),
            m => {
                // Reject unknown mnemonics early so they are reported even
                // when a later line has a different error.
                let lenient = Ctx { symbols: &symbols, lenient: true };
                if let Err(AsmErrorKind::UnknownMnemonic(u)) = expand(&lenient, m, &ops, addr) {
                    return Err(err(number, AsmErrorKind::UnknownMnemonic(u)));
                }
                let size = statement_size(m, &ops);
                lines.push(Line { number, addr, stmt: Stmt::Inst { mnemonic: m.into(), ops } });
                addr += 4 * size as u32;
            }
        }
    }

    // Pass 2: encode.
    let ctx = Ctx { symbols: &symbols, lenient: false };
    let mut words = Vec::with_capacity(((addr - origin) / 4) as usize);
    for line in &lines {
        debug_assert_eq!(origin + 4 * words.len() as u32, line.addr);
        match &line.stmt {
            Stmt::Words(vals) => {
                for v in vals {
                    let x = ctx.eval(v).map_err(|k| err(line.number, k))?;
                    if !(i32::MIN as i64..=u32::MAX as i64).contains(&x) {
                        return Err(err(line.number, AsmErrorKind::ImmediateOutOfRange { value: x, bits: 32 }));
                    }
                    words.push(x as u32);
                }
            }
            Stmt::Inst { mnemonic, ops } => {
                let insts = expand(&ctx, mnemonic, ops, line.addr).map_err(|k| err(line.number, k))?;
                debug_assert_eq!(insts.len(), statement_size(mnemonic, ops));
                words.extend(insts.iter().map(encode));
            }
        }
    }
    if words.is_empty() {
        return Err(err(source.lines().count().max(1), AsmErrorKind::Empty));
    }
    Ok(ProgramImage { origin, words, symbols })
}

/// Assemble `source` at address 0.
pub fn assemble(source: &str) -> Result<ProgramImage, AsmError> {
    assemble_at(source, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::decode;

    fn one(src: &str) -> u32 {
        assemble(src).unwrap().words[0]
    }

    #[test]
    fn nop_and_add() {
        assert_eq!(one("nop"), 0x0000_0013);
        assert_eq!(one("add x1, x2, x3"), 0x0031_00b3);
    }

    #[test]
    fn backward_branch_to_label() {
        let img = assemble("label:\n nop\n beq x0, x0, label").unwrap();
        assert_eq!(img.words[1] & 0x7f, 0x63);
        assert_eq!(decode(img.words[1]), Instruction::Branch { kind: BranchKind::Beq, rs1: 0, rs2: 0, offset: -4 });
    }

    #[test]
    fn li_sizes_and_values() {
        let img = assemble("li a0, 5\nli a1, 0x40000010\nli a2, -1\nli a3, 0x800").unwrap();
        assert_eq!(img.words.len(), 1 + 2 + 1 + 2);
        let ins: Vec<_> = img.words.iter().map(|w| decode(*w)).collect();
        assert_eq!(ins[1], Instruction::Lui { rd: 11, imm: 0x4000_0000 });
        assert_eq!(ins[2], Instruction::OpImm { op: ImmOp::Addi, rd: 11, rs1: 11, imm: 0x10 });
        assert_eq!(ins[5], Instruction::OpImm { op: ImmOp::Addi, rd: 13, rs1: 13, imm: -2048 });
    }

    #[test]
    fn symbols_org_and_word() {
        let img = assemble_at(".equ BASE, 0x100\nstart: j end\n.org 0x10\nend: .word BASE+4, start", 0x0).unwrap();
        assert_eq!(img.symbol("end"), Some(0x10));
        assert_eq!(img.words.len(), 6);
        assert_eq!(&img.words[4..], &[0x104, 0]);
        assert_eq!(decode(img.words[0]), Instruction::Jal { rd: 0, offset: 0x10 });
    }

    #[test]
    fn csr_names() {
        assert_eq!(one("csrrw x5, muictl, x6"), 0x7c03_12f3);
        assert_eq!(
            decode(one("csrw iidnum3, a0")),
            Instruction::Csr { op: CsrOp::Rw, rd: 0, src: CsrSrc::Reg(10), csr: csr::IIDNUM_BASE + 3 }
        );
    }

    #[test]
    fn distinct_errors_with_lines() {
        let e = assemble("nop\nfrob x1").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(matches!(e.kind, AsmErrorKind::UnknownMnemonic(_)));
        let e = assemble("nop\nnop\naddi x1, x0, 5000").unwrap_err();
        assert_eq!(e, AsmError { line: 3, kind: AsmErrorKind::ImmediateOutOfRange { value: 5000, bits: 12 } });
        let e = assemble("a:\nnop\na: nop").unwrap_err();
        assert_eq!(e, AsmError { line: 3, kind: AsmErrorKind::DuplicateLabel("a".into()) });
        let e = assemble("j nowhere").unwrap_err();
        assert!(matches!(e.kind, AsmErrorKind::UndefinedSymbol(_)));
    }

    #[test]
    fn binary_round_trip() {
        let img = assemble_at("nop\nadd x1, x2, x3", 0x100).unwrap();
        let back = ProgramImage::from_binary(0x100, &img.to_binary()).unwrap();
        assert_eq!(back.words, img.words);
        assert!(ProgramImage::from_binary(0, &[1, 2, 3]).is_err());
    }

    #[test]
    fn hi_lo_split() {
        for v in [0u32, 0x7ff, 0x800, 0xffff_ffff, 0x4000_0800, 0x1234_5678] {
            let (hi, lo) = split_hi_lo(v);
            assert_eq!((hi << 12).wrapping_add(lo as u32), v);
        }
    }
}
