//! Architectural core state.

use super::csr::CsrFile;
use super::{Mode, Reg};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MachineState {
    gprs: [u32; 32],
    pub pc: u32,
    pub mode: Mode,
    pub csrs: CsrFile,
    /// Register bank currently mapped onto the architectural GPRs.
    pub active_bank: usize,
    pub cycle: u64,
    /// Set by any control-flow redirect; the next instruction pays the
    /// pipeline refill before it reaches execute.
    pub refill_pending: bool,
}

impl MachineState {
    pub fn new(csrs: CsrFile, pc: u32) -> Self {
        assert!(pc.is_multiple_of(4), "pc must be word aligned");
        Self { gprs: [0; 32], pc, mode: Mode::Machine, csrs, active_bank: 0, cycle: 0, refill_pending: false }
    }

    #[inline]
    pub fn reg(&self, r: Reg) -> u32 {
        self.gprs[r as usize]
    }

    /// Writes to `x0` are discarded.
    #[inline]
    pub fn set_reg(&mut self, r: Reg, value: u32) {
        if r != 0 {
            self.gprs[r as usize] = value;
        }
    }

    pub fn gprs(&self) -> &[u32; 32] {
        &self.gprs
    }

    /// Replace all GPRs; `x0` stays zero whatever `regs[0]` holds.
    pub fn set_gprs(&mut self, regs: &[u32; 32]) {
        self.gprs = *regs;
        self.gprs[0] = 0;
    }

    pub fn zero_gprs(&mut self) {
        self.gprs = [0; 32];
    }

    /// Jump to `target` as a pipeline redirect.
    pub fn redirect(&mut self, target: u32) {
        self.pc = target;
        self.refill_pending = true;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn x0_discards_writes() {
        let mut s = MachineState::new(CsrFile::baseline(), 0);
        s.set_reg(0, 7);
        s.set_reg(5, 9);
        assert_eq!(s.reg(0), 0);
        assert_eq!(s.reg(5), 9);
        let mut all = [1u32; 32];
        all[3] = 3;
        s.set_gprs(&all);
        assert_eq!(s.reg(0), 0);
        assert_eq!(s.reg(3), 3);
    }
}
