//! Segment-based physical memory protection.
//!
//! A protection domain is a [`PmpSet`] of `K` range entries. In memory a set
//! is a packed record of `2K + 1` little-endian words:
//!
//! ```text
//! word 2i     base of entry i
//! word 2i+1   limit of entry i (exclusive)
//! word 2K     permissions, 3 bits per entry at bit 3i: R=1, W=2, X=4
//! ```
//!
//! Unused entries have `base == limit` and no permissions.

use crate::isa::Mode;
use crate::memory::{BusFault, MemorySystem, PortRequest, Requester};

pub const PERM_R: u8 = 1;
pub const PERM_W: u8 = 2;
pub const PERM_X: u8 = 4;

/// Most entries a packed permissions word can describe.
pub const MAX_ENTRIES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessKind {
    Read,
    Write,
    Exec,
}

impl AccessKind {
    fn perm(self) -> u8 {
        match self {
            AccessKind::Read => PERM_R,
            AccessKind::Write => PERM_W,
            AccessKind::Exec => PERM_X,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct PmpEntry {
    pub base: u32,
    pub limit: u32,
    pub perms: u8,
}

impl PmpEntry {
    pub fn new(base: u32, limit: u32, perms: u8) -> Self {
        debug_assert!(base <= limit && base.is_multiple_of(4) && limit.is_multiple_of(4));
        Self { base, limit, perms: perms & 0b111 }
    }

    pub fn covers(&self, addr: u32, len: u32) -> bool {
        addr >= self.base && addr as u64 + len as u64 <= self.limit as u64
    }

    pub fn is_empty(&self) -> bool {
        self.base == self.limit || self.perms == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PmpSet {
    pub entries: Vec<PmpEntry>,
    pub owner: u32,
}

impl PmpSet {
    /// An empty set of `k` entries: user mode can touch nothing.
    pub fn empty(k: usize, owner: u32) -> Self {
        assert!(k <= MAX_ENTRIES, "at most {MAX_ENTRIES} PMP entries fit the record layout");
        Self { entries: vec![PmpEntry::default(); k], owner }
    }

    /// Build a `k`-entry set from up to `k` entries, padding with empty ones.
    pub fn from_entries(k: usize, owner: u32, entries: &[PmpEntry]) -> Self {
        assert!(entries.len() <= k, "{} entries do not fit a {k}-entry set", entries.len());
        let mut set = Self::empty(k, owner);
        set.entries[..entries.len()].copy_from_slice(entries);
        set
    }

    pub fn k(&self) -> usize {
        self.entries.len()
    }

    pub fn record_words(k: usize) -> u32 {
        2 * k as u32 + 1
    }

    pub fn encode(&self) -> Vec<u32> {
        let mut words = Vec::with_capacity(2 * self.k() + 1);
        let mut perms = 0u32;
        for (i, e) in self.entries.iter().enumerate() {
            words.push(e.base);
            words.push(e.limit);
            perms |= (e.perms as u32 & 0b111) << (3 * i);
        }
        words.push(perms);
        words
    }

    pub fn decode(words: &[u32], owner: u32) -> Self {
        assert!(words.len() % 2 == 1, "PMP record has odd length");
        let k = words.len() / 2;
        let perms = words[2 * k];
        let entries = (0..k)
            .map(|i| PmpEntry {
                base: words[2 * i],
                limit: words[2 * i + 1],
                perms: ((perms >> (3 * i)) & 0b111) as u8,
            })
            .collect();
        Self { entries, owner }
    }

    /// Whether user mode may perform `access` on `[addr, addr+len)`.
    pub fn allows(&self, addr: u32, len: u32, access: AccessKind) -> bool {
        let need = access.perm();
        self.entries.iter().any(|e| e.perms & need != 0 && e.covers(addr, len))
    }

    /// True when every permission this set grants is also granted by `outer`.
    pub fn is_subset_of(&self, outer: &PmpSet) -> bool {
        self.entries.iter().filter(|e| !e.is_empty()).all(|e| {
            [AccessKind::Read, AccessKind::Write, AccessKind::Exec].iter().all(|&a| {
                e.perms & a.perm() == 0 || covered_by(outer, e.base, e.limit, a)
            })
        })
    }
}

/// Whether the union of `outer`'s entries with permission `a` covers the
/// whole range `[base, limit)`.
fn covered_by(outer: &PmpSet, base: u32, limit: u32, a: AccessKind) -> bool {
    let mut pos = base as u64;
    let limit = limit as u64;
    loop {
        if pos >= limit {
            return true;
        }
        let next = outer
            .entries
            .iter()
            .filter(|e| e.perms & a.perm() != 0 && (e.base as u64) <= pos && (e.limit as u64) > pos)
            .map(|e| e.limit as u64)
            .max();
        match next {
            Some(n) => pos = n,
            None => return false,
        }
    }
}

/// PMP permission check. Machine mode bypasses the PMP (no locked entries
/// are modelled); user mode needs one entry covering the whole access.
pub fn pmp_check(set: &PmpSet, addr: u32, len: u32, access: AccessKind, mode: Mode) -> bool {
    mode == Mode::Machine || set.allows(addr, len, access)
}

/// Load a packed PMP record from memory through the table-loader master.
/// Returns the set and the cycles the transfer took including stalls.
pub fn load_pmp_set(
    mem: &mut MemorySystem,
    table_addr: u32,
    k: usize,
    owner: u32,
    issue_cycle: u64,
) -> Result<(PmpSet, u64), BusFault> {
    let words = PmpSet::record_words(k);
    let req = PortRequest::burst(Requester::TableLoader, table_addr, words, false, issue_cycle);
    let grant = mem.schedule(&[req])?[0];
    let data = mem.read_words(table_addr, words)?;
    Ok((PmpSet::decode(&data, owner), grant.end - issue_cycle))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShadowDirection {
    Save,
    Restore,
}

/// Extra PMP register set holding the kernel-managed configuration while a
/// user-level handler runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShadowBank {
    pub saved: PmpSet,
    pub valid: bool,
}

/// The core's live PMP registers plus the shadow bank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PmpUnit {
    pub active: PmpSet,
    pub shadow: ShadowBank,
}

impl PmpUnit {
    pub fn new(k: usize) -> Self {
        Self {
            active: PmpSet::empty(k, 0),
            shadow: ShadowBank { saved: PmpSet::empty(k, 0), valid: false },
        }
    }

    pub fn k(&self) -> usize {
        self.active.k()
    }

    pub fn check(&self, addr: u32, len: u32, access: AccessKind, mode: Mode) -> bool {
        pmp_check(&self.active, addr, len, access, mode)
    }

    /// Bank or unbank the kernel-managed set. Costs no cycles.
    ///
    /// # Panics
    /// On save while the shadow is already valid, or restore while it is
    /// not: either is an engine sequencing bug.
    pub fn shadow_swap(&mut self, dir: ShadowDirection) -> u64 {
        match dir {
            ShadowDirection::Save => {
                assert!(!self.shadow.valid, "shadow PMP bank already holds a context");
                self.shadow.saved = self.active.clone();
                self.shadow.valid = true;
            }
            ShadowDirection::Restore => {
                assert!(self.shadow.valid, "shadow PMP bank is empty");
                self.active = self.shadow.saved.clone();
                self.shadow.valid = false;
            }
        }
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{BusTiming, MemoryMap, SRAM_BASE, TCM_TABLE_BASE};

    fn rw_set() -> PmpSet {
        PmpSet::from_entries(4, 1, &[PmpEntry::new(0x1000, 0x2000, PERM_R | PERM_W)])
    }

    #[test]
    fn write_inside_rw_entry_allowed() {
        assert!(pmp_check(&rw_set(), 0x1800, 4, AccessKind::Write, Mode::User));
    }

    #[test]
    fn one_past_limit_denied() {
        assert!(!pmp_check(&rw_set(), 0x2000, 1, AccessKind::Read, Mode::User));
        // straddling the limit is also denied
        assert!(!pmp_check(&rw_set(), 0x1ffe, 4, AccessKind::Read, Mode::User));
    }

    #[test]
    fn exec_without_x_denied() {
        assert!(!pmp_check(&rw_set(), 0x1000, 4, AccessKind::Exec, Mode::User));
    }

    #[test]
    fn machine_mode_bypasses() {
        assert!(pmp_check(&PmpSet::empty(4, 0), 0x1000, 4, AccessKind::Write, Mode::Machine));
    }

    #[test]
    fn record_layout_is_fixed() {
        let set = PmpSet::from_entries(
            2,
            0,
            &[PmpEntry::new(0x10, 0x20, PERM_R | PERM_X), PmpEntry::new(0x40, 0x80, PERM_W)],
        );
        assert_eq!(set.encode(), vec![0x10, 0x20, 0x40, 0x80, 0b010_101]);
        assert_eq!(PmpSet::decode(&set.encode(), 0), set);
    }

    #[test]
    fn load_cycles_sram_and_tcm() {
        let mut mem = MemorySystem::new(MemoryMap::standard(false, true), BusTiming::default());
        let set = rw_set();
        mem.write_words(SRAM_BASE, &set.encode()).unwrap();
        mem.write_words(TCM_TABLE_BASE, &set.encode()).unwrap();
        let (loaded, cycles) = load_pmp_set(&mut mem, SRAM_BASE, 4, 1, 0).unwrap();
        assert_eq!(loaded, set);
        // 9 words = 5 beats + address phase
        assert_eq!(cycles, 6);
        let (_, cycles) = load_pmp_set(&mut mem, TCM_TABLE_BASE, 4, 1, 100).unwrap();
        assert_eq!(cycles, 5);
    }

    #[test]
    fn load_from_unmapped_is_fault() {
        let mut mem = MemorySystem::new(MemoryMap::standard(false, false), BusTiming::default());
        assert!(load_pmp_set(&mut mem, 0x1000_0000, 4, 0, 0).is_err());
    }

    #[test]
    fn shadow_round_trip() {
        let mut unit = PmpUnit::new(4);
        unit.active = rw_set();
        assert_eq!(unit.shadow_swap(ShadowDirection::Save), 0);
        assert!(unit.shadow.valid);
        unit.active = PmpSet::empty(4, 9);
        unit.shadow_swap(ShadowDirection::Restore);
        assert_eq!(unit.active, rw_set());
        assert!(!unit.shadow.valid);
    }

    #[test]
    #[should_panic]
    fn double_save_is_a_bug() {
        let mut unit = PmpUnit::new(4);
        unit.shadow_swap(ShadowDirection::Save);
        unit.shadow_swap(ShadowDirection::Save);
    }

    #[test]
    fn subset_relation() {
        let outer = PmpSet::from_entries(
            4,
            1,
            &[PmpEntry::new(0x1000, 0x1800, PERM_R | PERM_W), PmpEntry::new(0x1800, 0x2000, PERM_R)],
        );
        let inner_ok = PmpSet::from_entries(4, 1, &[PmpEntry::new(0x1400, 0x1c00, PERM_R)]);
        let inner_bad = PmpSet::from_entries(4, 1, &[PmpEntry::new(0x1400, 0x1c00, PERM_W)]);
        assert!(inner_ok.is_subset_of(&outer));
        assert!(!inner_bad.is_subset_of(&outer));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn shadow_nesting_identity(depth in 1usize..6, seeds in proptest::collection::vec(any::<u32>(), 6)) {
                // A single shadow bank supports exactly one outstanding save; nested
                // handlers reload from tables instead, so every save pairs with one
                // restore and the kernel set survives arbitrary sequences of pairs.
                let mut unit = PmpUnit::new(4);
                let original = PmpSet::from_entries(4, 0, &[PmpEntry::new(0, (seeds[0] & !3) | 4, PERM_R)]);
                unit.active = original.clone();
                for s in seeds.iter().take(depth) {
                    unit.shadow_swap(ShadowDirection::Save);
                    unit.active = PmpSet::from_entries(4, *s, &[PmpEntry::new(0, 4, PERM_W)]);
                    unit.shadow_swap(ShadowDirection::Restore);
                    prop_assert_eq!(&unit.active, &original);
                }
            }

            #[test]
            fn encode_decode(k in 1usize..=MAX_ENTRIES, raw in proptest::collection::vec((any::<u32>(), any::<u32>(), 0u8..8), MAX_ENTRIES)) {
                let entries: Vec<PmpEntry> = raw.iter().take(k).map(|&(a, b, p)| {
                    let (lo, hi) = (a.min(b) & !3, a.max(b) & !3);
                    PmpEntry::new(lo, hi, p)
                }).collect();
                let set = PmpSet::from_entries(k, 3, &entries);
                prop_assert_eq!(PmpSet::decode(&set.encode(), 3), set);
            }
        }
    }
}
