//! Cycle-level simulator of an RV32IM real-time core with a deterministic
//! user-level interrupt extension.

pub mod isa;
pub mod memory;
pub mod protection;
pub mod engine;
pub mod trace;
pub mod kernel;
pub mod harness;

/// Core clock of the modelled part.
pub const CORE_HZ: u64 = 50_000_000;
