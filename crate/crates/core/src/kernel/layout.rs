//! Fixed addresses of kernel-owned data.

use crate::engine::{StackPort, TablePort, VariantConfig};
use crate::memory::{FLASH_BASE, SRAM_BASE, SRAM_SIZE, TCM_STACK_BASE, TCM_STACK_SIZE, TCM_TABLE_BASE};

/// Idle thread code: `wfi; j idle`.
pub const IDLE_PC: u32 = FLASH_BASE;
pub const IDLE_CODE_END: u32 = FLASH_BASE + 0x10;

/// IID table base (records, then the vector table).
pub const IID_BASE: u32 = SRAM_BASE + 0x1_0000;
/// PMP records when the table port is main SRAM.
pub const PMP_RECORDS_SRAM: u32 = SRAM_BASE + 0x1_1000;
pub const PMP_RECORD_SLOTS: u32 = 32;
/// Budget entries always live in SRAM.
pub const BUDGETS: u32 = SRAM_BASE + 0x1_2000;
pub const BUDGET_SLOTS: u32 = 64;
/// Hardware stack in SRAM: `[SRAM_STACK_LIMIT, SRAM end)`.
pub const SRAM_STACK_LIMIT: u32 = SRAM_BASE + 0x1_c000;

/// Start of the SRAM area handed to processes.
pub const USER_SRAM: u32 = SRAM_BASE;
pub const USER_SRAM_END: u32 = SRAM_BASE + 0x1_0000;

pub fn pmp_records_base(c: &VariantConfig) -> u32 {
    match c.table_port {
        TablePort::MainSram => PMP_RECORDS_SRAM,
        TablePort::TcmTable => TCM_TABLE_BASE,
    }
}

/// `(top, limit)` of the hardware stack.
pub fn hw_stack(c: &VariantConfig) -> (u32, u32) {
    match c.stack_port {
        StackPort::MainSram => (SRAM_BASE + SRAM_SIZE, SRAM_STACK_LIMIT),
        StackPort::TcmStack => (TCM_STACK_BASE + TCM_STACK_SIZE, TCM_STACK_BASE),
    }
}

/// Byte stride between PMP records (8-byte aligned).
pub fn pmp_record_stride(k: usize) -> u32 {
    (4 * (2 * k as u32 + 1)).next_multiple_of(8)
}
