//! RV32IM instruction set: decoding, assembly, architectural state and the
//! per-instruction cycle model.

pub mod asm;
pub mod csr;
pub mod exec;
pub mod inst;
pub mod state;

use serde::{Deserialize, Serialize};

pub use asm::{assemble, AsmError, ProgramImage};
pub use csr::{CsrAccess, CsrError, CsrFile};
pub use exec::{step, CoreTiming, CycleReport, MemEffect, StepEvent};
pub use inst::{decode, encode, Instruction, Reg};
pub use state::MachineState;

/// Privilege level. Only machine and user mode exist on the modelled core.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Machine,
    User,
}

impl Mode {
    /// Encoding used in `mstatus.MPP`.
    pub fn bits(self) -> u32 {
        match self {
            Mode::Machine => 0b11,
            Mode::User => 0b00,
        }
    }

    pub fn from_bits(bits: u32) -> Self {
        if bits & 0b11 == 0b11 {
            Mode::Machine
        } else {
            Mode::User
        }
    }
}
