//! Devices and experiment drivers.

pub mod budget;
pub mod compat;
pub mod devices;
pub mod isolation;
pub mod modbus;
pub mod probe;
pub mod pto;
pub mod rig;
pub mod stats;
pub mod sweep;
pub mod workloads;

use thiserror::Error;

use crate::engine::SimError;
use crate::isa::AsmError;
use crate::kernel::KernelError;
use crate::memory::BusFault;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HarnessError {
    #[error("kernel: {0}")]
    Kernel(KernelError),
    #[error("workload: {0}")]
    Asm(#[from] AsmError),
    #[error("bus: {0}")]
    Bus(#[from] BusFault),
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
    /// A handler was still running when its next interrupt fired.
    #[error("handler overran its period at cycle {cycle}")]
    Overrun { cycle: u64 },
    #[error("no progress after {cycles} cycles")]
    Stalled { cycles: u64 },
    #[error("invalid parameter: {0}")]
    Invalid(String),
}
