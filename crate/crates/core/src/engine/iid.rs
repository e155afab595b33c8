//! Interrupt identification data: which interrupts are user-level and where
//! their protection domains live.
//!
//! Table record, 4 words at `base + int_num * 16`:
//!
//! ```text
//! +0  enabled (non-zero = enabled)
//! +4  int_num (must equal the index for a hit)
//! +8  pmp_ptr
//! +12 budget_ptr
//! ```
//!
//! Handler entry addresses live in a vector table of one word per
//! interrupt number at `base + VECTOR_OFFSET`, after the 64 table records.
//! CAM builds use the same layout; only the records go unused.
//!
//! CAM entry `X` is `iidnumX`, `iidpmpX`, `iidtimX`. `iidnumX` holds the
//! interrupt number in bits `[15:0]`, bit 30 = enabled and bit 31 = valid.

use crate::isa::csr::CamRegs;
use crate::memory::{BusFault, MemorySystem};

pub const IID_VALID: u32 = 1 << 31;
pub const IID_ENABLED: u32 = 1 << 30;
/// Records in the table-mode IID table.
pub const IID_TABLE_ENTRIES: u32 = 64;
pub const IID_RECORD_BYTES: u32 = 16;
pub const VECTOR_OFFSET: u32 = IID_TABLE_ENTRIES * IID_RECORD_BYTES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct IidEntry {
    pub int_num: u32,
    pub pmp_ptr: u32,
    pub budget_ptr: u32,
    pub enabled: bool,
}

impl IidEntry {
    pub fn encode(&self) -> [u32; 4] {
        [self.enabled as u32, self.int_num, self.pmp_ptr, self.budget_ptr]
    }

    pub fn decode(w: &[u32]) -> Self {
        Self { enabled: w[0] != 0, int_num: w[1], pmp_ptr: w[2], budget_ptr: w[3] }
    }

    pub fn cam_num(&self) -> u32 {
        IID_VALID | if self.enabled { IID_ENABLED } else { 0 } | (self.int_num & 0xffff)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IidLookup {
    /// Not a user-level interrupt: the kernel-level path takes it.
    Miss,
    /// Registered but disabled: it stays pending.
    Disabled(IidEntry),
    Hit(IidEntry),
}

impl IidLookup {
    pub fn hit(&self) -> Option<IidEntry> {
        match self {
            IidLookup::Hit(e) => Some(*e),
            _ => None,
        }
    }

    fn from_entry(e: IidEntry) -> Self {
        if e.enabled {
            IidLookup::Hit(e)
        } else {
            IidLookup::Disabled(e)
        }
    }
}

/// Parallel match over the CAM; the lowest-numbered matching entry wins.
pub fn cam_lookup(cam: &CamRegs, int_num: u32) -> IidLookup {
    for (i, &n) in cam.num.iter().enumerate() {
        if n & IID_VALID != 0 && n & 0xffff == int_num & 0xffff {
            let e = IidEntry { int_num, pmp_ptr: cam.pmp[i], budget_ptr: cam.tim[i], enabled: n & IID_ENABLED != 0 };
            return IidLookup::from_entry(e);
        }
    }
    IidLookup::Miss
}

pub fn table_record_addr(base: u32, int_num: u32) -> Option<u32> {
    (int_num < IID_TABLE_ENTRIES).then(|| base + int_num * IID_RECORD_BYTES)
}

pub fn vector_addr(base: u32, int_num: u32) -> u32 {
    base + VECTOR_OFFSET + 4 * (int_num % IID_TABLE_ENTRIES)
}

/// Functional table lookup (timing is charged by the entry schedule).
pub fn table_lookup(mem: &MemorySystem, base: u32, int_num: u32) -> Result<IidLookup, BusFault> {
    let Some(addr) = table_record_addr(base, int_num) else {
        return Ok(IidLookup::Miss);
    };
    let e = IidEntry::decode(&mem.read_words(addr, 4)?);
    if e.int_num != int_num || (e.pmp_ptr == 0 && e.budget_ptr == 0) {
        return Ok(IidLookup::Miss);
    }
    Ok(IidLookup::from_entry(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{BusTiming, MemoryMap, SRAM_BASE};

    fn cam() -> CamRegs {
        CamRegs { num: vec![0; 16], pmp: vec![0; 16], tim: vec![0; 16] }
    }

    #[test]
    fn first_cam_match_wins() {
        let mut c = cam();
        for (slot, pmp) in [(2usize, 0x100u32), (5, 0x200)] {
            let e = IidEntry { int_num: 7, pmp_ptr: pmp, budget_ptr: pmp + 4, enabled: true };
            c.num[slot] = e.cam_num();
            c.pmp[slot] = e.pmp_ptr;
            c.tim[slot] = e.budget_ptr;
        }
        assert_eq!(cam_lookup(&c, 7).hit().unwrap().pmp_ptr, 0x100);
    }

    #[test]
    fn unregistered_misses() {
        assert_eq!(cam_lookup(&cam(), 9), IidLookup::Miss);
        let mem = MemorySystem::new(MemoryMap::standard(false, false), BusTiming::default());
        assert_eq!(table_lookup(&mem, SRAM_BASE, 9).unwrap(), IidLookup::Miss);
    }

    #[test]
    fn table_round_trip() {
        let mut mem = MemorySystem::new(MemoryMap::standard(false, false), BusTiming::default());
        let e = IidEntry { int_num: 3, pmp_ptr: SRAM_BASE + 0x400, budget_ptr: SRAM_BASE + 0x800, enabled: true };
        mem.write_words(table_record_addr(SRAM_BASE, 3).unwrap(), &e.encode()).unwrap();
        assert_eq!(table_lookup(&mem, SRAM_BASE, 3).unwrap(), IidLookup::Hit(e));
        let d = IidEntry { enabled: false, ..e };
        mem.write_words(table_record_addr(SRAM_BASE, 3).unwrap(), &d.encode()).unwrap();
        assert_eq!(table_lookup(&mem, SRAM_BASE, 3).unwrap(), IidLookup::Disabled(d));
        assert_eq!(table_lookup(&mem, SRAM_BASE, 64).unwrap(), IidLookup::Miss);
    }
}
