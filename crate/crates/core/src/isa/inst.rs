//! RV32IM instruction model with decode and encode.
//!
//! Only the base integer set, the M extension, Zicsr, and the handful of
//! system instructions the simulator needs (`ecall`, `ebreak`, `mret`,
//! `uret`, `wfi`, `fence`) are modelled. Compressed and floating-point
//! encodings decode as [`Instruction::Illegal`].

use std::fmt;

/// General-purpose register index (0..=31).
pub type Reg = u8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BranchKind {
    Beq,
    Bne,
    Blt,
    Bge,
    Bltu,
    Bgeu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LoadKind {
    Lb,
    Lh,
    Lw,
    Lbu,
    Lhu,
}

impl LoadKind {
    pub fn width(self) -> u32 {
        match self {
            LoadKind::Lb | LoadKind::Lbu => 1,
            LoadKind::Lh | LoadKind::Lhu => 2,
            LoadKind::Lw => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StoreKind {
    Sb,
    Sh,
    Sw,
}

impl StoreKind {
    pub fn width(self) -> u32 {
        match self {
            StoreKind::Sb => 1,
            StoreKind::Sh => 2,
            StoreKind::Sw => 4,
        }
    }
}

/// Register-immediate ALU operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ImmOp {
    Addi,
    Slti,
    Sltiu,
    Xori,
    Ori,
    Andi,
    Slli,
    Srli,
    Srai,
}

/// Register-register ALU operations, including the M extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegOp {
    Add,
    Sub,
    Sll,
    Slt,
    Sltu,
    Xor,
    Srl,
    Sra,
    Or,
    And,
    Mul,
    Mulh,
    Mulhsu,
    Mulhu,
    Div,
    Divu,
    Rem,
    Remu,
}

impl RegOp {
    pub fn is_muldiv(self) -> bool {
        matches!(
            self,
            RegOp::Mul
                | RegOp::Mulh
                | RegOp::Mulhsu
                | RegOp::Mulhu
                | RegOp::Div
                | RegOp::Divu
                | RegOp::Rem
                | RegOp::Remu
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CsrOp {
    Rw,
    Rs,
    Rc,
}

/// Source operand of a CSR instruction: a register or a 5-bit immediate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CsrSrc {
    Reg(Reg),
    Imm(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instruction {
    Lui { rd: Reg, imm: u32 },
    Auipc { rd: Reg, imm: u32 },
    Jal { rd: Reg, offset: i32 },
    Jalr { rd: Reg, rs1: Reg, offset: i32 },
    Branch { kind: BranchKind, rs1: Reg, rs2: Reg, offset: i32 },
    Load { kind: LoadKind, rd: Reg, rs1: Reg, offset: i32 },
    Store { kind: StoreKind, rs1: Reg, rs2: Reg, offset: i32 },
    OpImm { op: ImmOp, rd: Reg, rs1: Reg, imm: i32 },
    Op { op: RegOp, rd: Reg, rs1: Reg, rs2: Reg },
    Csr { op: CsrOp, rd: Reg, src: CsrSrc, csr: u16 },
    Fence,
    Ecall,
    Ebreak,
    /// Return from a user-level interrupt handler.
    Uret,
    Mret,
    Wfi,
    Illegal(u32),
}

pub const NOP: u32 = 0x0000_0013;

fn sext(value: u32, bits: u32) -> i32 {
    let shift = 32 - bits;
    ((value << shift) as i32) >> shift
}

fn rd(w: u32) -> Reg {
    ((w >> 7) & 0x1f) as Reg
}
fn rs1(w: u32) -> Reg {
    ((w >> 15) & 0x1f) as Reg
}
fn rs2(w: u32) -> Reg {
    ((w >> 20) & 0x1f) as Reg
}
fn funct3(w: u32) -> u32 {
    (w >> 12) & 0x7
}
fn funct7(w: u32) -> u32 {
    w >> 25
}

fn imm_i(w: u32) -> i32 {
    (w as i32) >> 20
}
fn imm_s(w: u32) -> i32 {
    sext(((w >> 25) << 5) | ((w >> 7) & 0x1f), 12)
}
fn imm_b(w: u32) -> i32 {
    let v = ((w >> 31) & 1) << 12
        | ((w >> 7) & 1) << 11
        | ((w >> 25) & 0x3f) << 5
        | ((w >> 8) & 0xf) << 1;
    sext(v, 13)
}
fn imm_j(w: u32) -> i32 {
    let v = ((w >> 31) & 1) << 20
        | ((w >> 12) & 0xff) << 12
        | ((w >> 20) & 1) << 11
        | ((w >> 21) & 0x3ff) << 1;
    sext(v, 21)
}

/// Decode one 32-bit word. Never fails: unsupported encodings become
/// [`Instruction::Illegal`] so the pipeline can raise an exception.
pub fn decode(w: u32) -> Instruction {
    use Instruction::*;
    let illegal = Illegal(w);
    if w & 0b11 != 0b11 {
        return illegal;
    }
    match w & 0x7f {
        0x37 => Lui { rd: rd(w), imm: w & 0xffff_f000 },
        0x17 => Auipc { rd: rd(w), imm: w & 0xffff_f000 },
        0x6f => Jal { rd: rd(w), offset: imm_j(w) },
        0x67 if funct3(w) == 0 => Jalr { rd: rd(w), rs1: rs1(w), offset: imm_i(w) },
        0x63 => {
            let kind = match funct3(w) {
                0 => BranchKind::Beq,
                1 => BranchKind::Bne,
                4 => BranchKind::Blt,
                5 => BranchKind::Bge,
                6 => BranchKind::Bltu,
                7 => BranchKind::Bgeu,
                _ => return illegal,
            };
            Branch { kind, rs1: rs1(w), rs2: rs2(w), offset: imm_b(w) }
        }
        0x03 => {
            let kind = match funct3(w) {
                0 => LoadKind::Lb,
                1 => LoadKind::Lh,
                2 => LoadKind::Lw,
                4 => LoadKind::Lbu,
                5 => LoadKind::Lhu,
                _ => return illegal,
            };
            Load { kind, rd: rd(w), rs1: rs1(w), offset: imm_i(w) }
        }
        0x23 => {
            let kind = match funct3(w) {
                0 => StoreKind::Sb,
                1 => StoreKind::Sh,
                2 => StoreKind::Sw,
                _ => return illegal,
            };
            Store { kind, rs1: rs1(w), rs2: rs2(w), offset: imm_s(w) }
        }
        0x13 => {
            let imm = imm_i(w);
            let shamt = ((w >> 20) & 0x1f) as i32;
            let op = match funct3(w) {
                0 => ImmOp::Addi,
                2 => ImmOp::Slti,
                3 => ImmOp::Sltiu,
                4 => ImmOp::Xori,
                6 => ImmOp::Ori,
                7 => ImmOp::Andi,
                1 if funct7(w) == 0 => {
                    return OpImm { op: ImmOp::Slli, rd: rd(w), rs1: rs1(w), imm: shamt }
                }
                5 if funct7(w) == 0 => {
                    return OpImm { op: ImmOp::Srli, rd: rd(w), rs1: rs1(w), imm: shamt }
                }
                5 if funct7(w) == 0x20 => {
                    return OpImm { op: ImmOp::Srai, rd: rd(w), rs1: rs1(w), imm: shamt }
                }
                _ => return illegal,
            };
            OpImm { op, rd: rd(w), rs1: rs1(w), imm }
        }
        0x33 => {
            let op = match (funct7(w), funct3(w)) {
                (0x00, 0) => RegOp::Add,
                (0x20, 0) => RegOp::Sub,
                (0x00, 1) => RegOp::Sll,
                (0x00, 2) => RegOp::Slt,
                (0x00, 3) => RegOp::Sltu,
                (0x00, 4) => RegOp::Xor,
                (0x00, 5) => RegOp::Srl,
                (0x20, 5) => RegOp::Sra,
                (0x00, 6) => RegOp::Or,
                (0x00, 7) => RegOp::And,
                (0x01, 0) => RegOp::Mul,
                (0x01, 1) => RegOp::Mulh,
                (0x01, 2) => RegOp::Mulhsu,
                (0x01, 3) => RegOp::Mulhu,
                (0x01, 4) => RegOp::Div,
                (0x01, 5) => RegOp::Divu,
                (0x01, 6) => RegOp::Rem,
                (0x01, 7) => RegOp::Remu,
                _ => return illegal,
            };
            Op { op, rd: rd(w), rs1: rs1(w), rs2: rs2(w) }
        }
        0x0f if funct3(w) == 0 => Fence,
        0x73 => {
            let csr = (w >> 20) as u16;
            match funct3(w) {
                0 => match w {
                    0x0000_0073 => Ecall,
                    0x0010_0073 => Ebreak,
                    0x0020_0073 => Uret,
                    0x3020_0073 => Mret,
                    0x1050_0073 => Wfi,
                    _ => illegal,
                },
                f @ (1..=3) => Csr {
                    op: csr_op(f),
                    rd: rd(w),
                    src: CsrSrc::Reg(rs1(w)),
                    csr,
                },
                f @ (5..=7) => Csr {
                    op: csr_op(f - 4),
                    rd: rd(w),
                    src: CsrSrc::Imm(rs1(w)),
                    csr,
                },
                _ => illegal,
            }
        }
        _ => illegal,
    }
}

fn csr_op(f: u32) -> CsrOp {
    match f {
        1 => CsrOp::Rw,
        2 => CsrOp::Rs,
        _ => CsrOp::Rc,
    }
}

fn r_type(f7: u32, rs2: Reg, rs1: Reg, f3: u32, rd: Reg, opcode: u32) -> u32 {
    f7 << 25 | (rs2 as u32) << 20 | (rs1 as u32) << 15 | f3 << 12 | (rd as u32) << 7 | opcode
}
fn i_type(imm: i32, rs1: Reg, f3: u32, rd: Reg, opcode: u32) -> u32 {
    ((imm as u32) & 0xfff) << 20 | (rs1 as u32) << 15 | f3 << 12 | (rd as u32) << 7 | opcode
}
fn s_type(imm: i32, rs2: Reg, rs1: Reg, f3: u32, opcode: u32) -> u32 {
    let imm = imm as u32;
    ((imm >> 5) & 0x7f) << 25
        | (rs2 as u32) << 20
        | (rs1 as u32) << 15
        | f3 << 12
        | (imm & 0x1f) << 7
        | opcode
}
fn b_type(imm: i32, rs2: Reg, rs1: Reg, f3: u32) -> u32 {
    let imm = imm as u32;
    ((imm >> 12) & 1) << 31
        | ((imm >> 5) & 0x3f) << 25
        | (rs2 as u32) << 20
        | (rs1 as u32) << 15
        | f3 << 12
        | ((imm >> 1) & 0xf) << 8
        | ((imm >> 11) & 1) << 7
        | 0x63
}
fn j_type(imm: i32, rd: Reg) -> u32 {
    let imm = imm as u32;
    ((imm >> 20) & 1) << 31
        | ((imm >> 1) & 0x3ff) << 21
        | ((imm >> 11) & 1) << 20
        | ((imm >> 12) & 0xff) << 12
        | (rd as u32) << 7
        | 0x6f
}

/// Encode an instruction. Immediates are assumed to be in range (the
/// assembler validates them); out-of-range bits are truncated.
pub fn encode(inst: &Instruction) -> u32 {
    use Instruction::*;
    match *inst {
        Lui { rd, imm } => (imm & 0xffff_f000) | (rd as u32) << 7 | 0x37,
        Auipc { rd, imm } => (imm & 0xffff_f000) | (rd as u32) << 7 | 0x17,
        Jal { rd, offset } => j_type(offset, rd),
        Jalr { rd, rs1, offset } => i_type(offset, rs1, 0, rd, 0x67),
        Branch { kind, rs1, rs2, offset } => {
            let f3 = match kind {
                BranchKind::Beq => 0,
                BranchKind::Bne => 1,
                BranchKind::Blt => 4,
                BranchKind::Bge => 5,
                BranchKind::Bltu => 6,
                BranchKind::Bgeu => 7,
            };
            b_type(offset, rs2, rs1, f3)
        }
        Load { kind, rd, rs1, offset } => {
            let f3 = match kind {
                LoadKind::Lb => 0,
                LoadKind::Lh => 1,
                LoadKind::Lw => 2,
                LoadKind::Lbu => 4,
                LoadKind::Lhu => 5,
            };
            i_type(offset, rs1, f3, rd, 0x03)
        }
        Store { kind, rs1, rs2, offset } => {
            let f3 = match kind {
                StoreKind::Sb => 0,
                StoreKind::Sh => 1,
                StoreKind::Sw => 2,
            };
            s_type(offset, rs2, rs1, f3, 0x23)
        }
        OpImm { op, rd, rs1, imm } => match op {
            ImmOp::Addi => i_type(imm, rs1, 0, rd, 0x13),
            ImmOp::Slti => i_type(imm, rs1, 2, rd, 0x13),
            ImmOp::Sltiu => i_type(imm, rs1, 3, rd, 0x13),
            ImmOp::Xori => i_type(imm, rs1, 4, rd, 0x13),
            ImmOp::Ori => i_type(imm, rs1, 6, rd, 0x13),
            ImmOp::Andi => i_type(imm, rs1, 7, rd, 0x13),
            ImmOp::Slli => i_type(imm & 0x1f, rs1, 1, rd, 0x13),
            ImmOp::Srli => i_type(imm & 0x1f, rs1, 5, rd, 0x13),
            ImmOp::Srai => i_type((imm & 0x1f) | 0x400, rs1, 5, rd, 0x13),
        },
        Op { op, rd, rs1, rs2 } => {
            let (f7, f3) = match op {
                RegOp::Add => (0x00, 0),
                RegOp::Sub => (0x20, 0),
                RegOp::Sll => (0x00, 1),
                RegOp::Slt => (0x00, 2),
                RegOp::Sltu => (0x00, 3),
                RegOp::Xor => (0x00, 4),
                RegOp::Srl => (0x00, 5),
                RegOp::Sra => (0x20, 5),
                RegOp::Or => (0x00, 6),
                RegOp::And => (0x00, 7),
                RegOp::Mul => (0x01, 0),
                RegOp::Mulh => (0x01, 1),
                RegOp::Mulhsu => (0x01, 2),
                RegOp::Mulhu => (0x01, 3),
                RegOp::Div => (0x01, 4),
                RegOp::Divu => (0x01, 5),
                RegOp::Rem => (0x01, 6),
                RegOp::Remu => (0x01, 7),
            };
            r_type(f7, rs2, rs1, f3, rd, 0x33)
        }
        Csr { op, rd, src, csr } => {
            let base = match op {
                CsrOp::Rw => 1,
                CsrOp::Rs => 2,
                CsrOp::Rc => 3,
            };
            let (f3, field) = match src {
                CsrSrc::Reg(r) => (base, r),
                CsrSrc::Imm(i) => (base + 4, i & 0x1f),
            };
            (csr as u32) << 20 | (field as u32) << 15 | f3 << 12 | (rd as u32) << 7 | 0x73
        }
        Fence => 0x0ff0_000f,
        Ecall => 0x0000_0073,
        Ebreak => 0x0010_0073,
        Uret => 0x0020_0073,
        Mret => 0x3020_0073,
        Wfi => 0x1050_0073,
        Illegal(w) => w,
    }
}

impl fmt::Display for BranchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BranchKind::Beq => "beq",
            BranchKind::Bne => "bne",
            BranchKind::Blt => "blt",
            BranchKind::Bge => "bge",
            BranchKind::Bltu => "bltu",
            BranchKind::Bgeu => "bgeu",
        };
        f.write_str(s)
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Instruction::*;
        match *self {
            Lui { rd, imm } => write!(f, "lui x{rd}, {:#x}", imm >> 12),
            Auipc { rd, imm } => write!(f, "auipc x{rd}, {:#x}", imm >> 12),
            Jal { rd, offset } => write!(f, "jal x{rd}, {offset}"),
            Jalr { rd, rs1, offset } => write!(f, "jalr x{rd}, {offset}(x{rs1})"),
            Branch { kind, rs1, rs2, offset } => write!(f, "{kind} x{rs1}, x{rs2}, {offset}"),
            Load { kind, rd, rs1, offset } => {
                write!(f, "{} x{rd}, {offset}(x{rs1})", format!("{kind:?}").to_lowercase())
            }
            Store { kind, rs1, rs2, offset } => {
                write!(f, "{} x{rs2}, {offset}(x{rs1})", format!("{kind:?}").to_lowercase())
            }
            OpImm { op, rd, rs1, imm } => {
                write!(f, "{} x{rd}, x{rs1}, {imm}", format!("{op:?}").to_lowercase())
            }
            Op { op, rd, rs1, rs2 } => {
                write!(f, "{} x{rd}, x{rs1}, x{rs2}", format!("{op:?}").to_lowercase())
            }
            Csr { op, rd, src, csr } => {
                let name = format!("{op:?}").to_lowercase();
                match src {
                    CsrSrc::Reg(r) => write!(f, "csr{name} x{rd}, {csr:#x}, x{r}"),
                    CsrSrc::Imm(i) => write!(f, "csr{name}i x{rd}, {csr:#x}, {i}"),
                }
            }
            Fence => f.write_str("fence"),
            Ecall => f.write_str("ecall"),
            Ebreak => f.write_str("ebreak"),
            Uret => f.write_str("uret"),
            Mret => f.write_str("mret"),
            Wfi => f.write_str("wfi"),
            Illegal(w) => write!(f, "illegal {w:#010x}"),
        }
    }
}
