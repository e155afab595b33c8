//! Assembly sources for the experiment tasks.

use crate::isa::asm::{assemble_at, AsmError, ProgramImage};
use crate::kernel::sys;
use crate::memory::MMIO_BASE;

pub const PROBE: &str = include_str!("../../workloads/probe.s");
pub const PTO: &str = include_str!("../../workloads/pto.s");
pub const FRAMES: &str = include_str!("../../workloads/frames.s");
pub const MODBUS: &str = include_str!("../../workloads/modbus.s");
pub const CHURN: &str = include_str!("../../workloads/churn.s");
pub const ATTACKER: &str = include_str!("../../workloads/attacker.s");
pub const VICTIM: &str = include_str!("../../workloads/victim.s");

/// Busy-loop iterations per background frame: `2n + 12` cycles each.
pub const FRAME_ITERS: u32 = 176_050;
pub const CRC_BITS: u32 = 4;

/// Assemble `src` at `origin` with `MMIO`, `DATA`, `SYS_YIELD` and any
/// extra constants predefined.
pub fn build(src: &str, origin: u32, data: u32, extra: &[(&str, u32)]) -> Result<ProgramImage, AsmError> {
    let mut text = format!(".equ MMIO, {MMIO_BASE:#x}\n.equ DATA, {data:#x}\n.equ SYS_YIELD, {}\n", sys::YIELD);
    for (k, v) in extra {
        text.push_str(&format!(".equ {k}, {v:#x}\n"));
    }
    text.push_str(src);
    assemble_at(&text, origin)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_workloads_assemble() {
        let extra = [("FRAME_ITERS", FRAME_ITERS), ("CRC_BITS", CRC_BITS), ("VICTIM_ADDR", 0x2000_4000)];
        for src in [PROBE, PTO, FRAMES, MODBUS, CHURN, ATTACKER, VICTIM] {
            let img = build(src, 0x1000, 0x2000_0000, &extra).unwrap();
            assert!(img.words.len() > 2);
        }
    }
}
