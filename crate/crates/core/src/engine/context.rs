//! Register context frames and the extra register banks.
//!
//! Frame layout, 33 words from the frame base: `x1..x31`, the saved
//! `muiepc`, then a status word (bit 0: preempted context was in machine
//! mode; bits `[31:8]`: `mstatus[23:0]`).

use crate::isa::{MachineState, Mode};

pub const FRAME_WORDS: u32 = 33;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ContextFrame {
    pub regs: [u32; 31],
    pub epc: u32,
    pub status: u32,
}

impl ContextFrame {
    pub fn capture(state: &MachineState, epc: u32) -> Self {
        let mut regs = [0; 31];
        regs.copy_from_slice(&state.gprs()[1..]);
        let mode_bit = (state.mode == Mode::Machine) as u32;
        Self { regs, epc, status: mode_bit | (state.csrs.mstatus & 0x00ff_ffff) << 8 }
    }

    pub fn mode(&self) -> Mode {
        if self.status & 1 != 0 {
            Mode::Machine
        } else {
            Mode::User
        }
    }

    pub fn mstatus(&self) -> u32 {
        self.status >> 8
    }

    /// Put the registers and mode back into `state`.
    pub fn restore_into(&self, state: &mut MachineState) {
        let mut all = [0u32; 32];
        all[1..].copy_from_slice(&self.regs);
        state.set_gprs(&all);
        state.mode = self.mode();
        state.csrs.mstatus = self.mstatus();
    }

    pub fn encode(&self) -> Vec<u32> {
        let mut w = self.regs.to_vec();
        w.push(self.epc);
        w.push(self.status);
        w
    }

    pub fn decode(words: &[u32]) -> Self {
        assert_eq!(words.len(), FRAME_WORDS as usize);
        let mut regs = [0; 31];
        regs.copy_from_slice(&words[..31]);
        Self { regs, epc: words[31], status: words[32] }
    }
}

/// Extra register banks. Bank 0 is the architectural file; banks `1..=n`
/// hold the contexts of preempted code while a handler runs on a fresh one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BankSet {
    slots: Vec<Option<ContextFrame>>,
}

impl BankSet {
    pub fn new(extra: usize) -> Self {
        Self { slots: vec![None; extra] }
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn free(&self) -> Option<usize> {
        self.slots.iter().position(Option::is_none)
    }

    pub fn in_use(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    /// Park `frame` in bank `idx`. Zero cycles.
    pub fn store(&mut self, idx: usize, frame: ContextFrame) {
        assert!(self.slots[idx].is_none(), "bank {idx} already holds a context");
        self.slots[idx] = Some(frame);
    }

    pub fn take(&mut self, idx: usize) -> ContextFrame {
        self.slots[idx].take().expect("restoring from an empty bank")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::CsrFile;

    #[test]
    fn frame_round_trip() {
        let mut s = MachineState::new(CsrFile::baseline(), 0);
        for r in 1..32 {
            s.set_reg(r, r as u32 * 3);
        }
        s.mode = Mode::User;
        let f = ContextFrame::capture(&s, 0x1234);
        assert_eq!(f.encode().len(), FRAME_WORDS as usize);
        assert_eq!(ContextFrame::decode(&f.encode()), f);
        let mut t = MachineState::new(CsrFile::baseline(), 0);
        f.restore_into(&mut t);
        assert_eq!(t.gprs(), s.gprs());
        assert_eq!(t.mode, Mode::User);
    }

    #[test]
    fn banks_fill_in_order() {
        let mut b = BankSet::new(1);
        let f = ContextFrame { regs: [1; 31], epc: 0, status: 0 };
        assert_eq!(b.free(), Some(0));
        b.store(0, f);
        assert_eq!(b.free(), None);
        assert_eq!(b.take(0), f);
    }
}
