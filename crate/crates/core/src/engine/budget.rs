//! Temporal protection domains.
//!
//! Budget entry, 3 words: `remaining`, `granted`, `policy_ref`. The hardware
//! only reads and writes `remaining`; the kernel owns the other two.

pub const BUDGET_ENTRY_WORDS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BudgetEntry {
    pub remaining: u32,
    pub granted: u32,
    pub policy_ref: u32,
}

impl BudgetEntry {
    pub fn encode(&self) -> [u32; 3] {
        [self.remaining, self.granted, self.policy_ref]
    }

    pub fn decode(w: &[u32]) -> Self {
        Self { remaining: w[0], granted: w[1], policy_ref: w[2] }
    }
}
