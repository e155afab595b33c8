//! A small microkernel modelled at the cost level: processes with PMP
//! domains, round-robin threads, the user-interrupt system calls,
//! deferrable-server budgets and the three software delivery baselines.
//!
//! Kernel code is not simulated instruction by instruction. Each kernel
//! path is a [`KernelBlock`](crate::engine::machine::KernelBlock) whose
//! length comes from [`KernelCosts`]; user code (threads and handlers) is
//! real RV32IM.

mod api;
pub mod layout;
mod system;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::calib::idle_entry_total;
use crate::engine::{Variant, VariantConfig};

pub use system::{Process, System, Thread, ThreadState};

/// Cycle costs of the kernel's software paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelCosts {
    /// Trap dispatch, domain switch and upcall setup for kernel delivery.
    pub kernel_entry: u64,
    /// Extra work on the same path that the latency probe also sees
    /// (interrupt controller reads, trap-frame spills).
    pub kernel_entry_extra: u64,
    /// Upcall return back into the interrupted thread.
    pub kernel_exit: u64,
    /// Direct delivery into a running target process.
    pub intel_fast_entry: u64,
    pub intel_fast_exit: u64,
    /// Software prologue including PMP reconfiguration.
    pub software_entry: u64,
    /// Part of `software_entry` spent reprogramming the PMP; skipped when
    /// the target is already running.
    pub software_pmp: u64,
    pub software_exit: u64,
    /// Scheduler tick: replenishment, run-queue update, context switch.
    pub tick: u64,
    /// Interrupt-masked tail of the tick and of yields, where the next
    /// thread is installed.
    pub tick_masked: u64,
    pub syscall: u64,
    /// Unregistered or disabled interrupt.
    pub spurious: u64,
    /// Tearing down a faulting thread.
    pub fault: u64,
}

impl Default for KernelCosts {
    fn default() -> Self {
        Self {
            kernel_entry: 634,
            kernel_entry_extra: 180,
            kernel_exit: 860,
            intel_fast_entry: 40,
            intel_fast_exit: 30,
            software_entry: 120,
            software_pmp: 30,
            software_exit: 76,
            tick: 750,
            tick_masked: 8,
            syscall: 150,
            spurious: 60,
            fault: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Ext,
    Kernel,
    Intel,
    Software,
}

impl SchemeKind {
    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Ext => "ext",
            SchemeKind::Kernel => "kernel",
            SchemeKind::Intel => "intel",
            SchemeKind::Software => "software",
        }
    }
}

/// How interrupts reach their handlers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Scheme {
    Extension(VariantConfig),
    Kernel,
    Intel,
    Software,
}

impl Scheme {
    pub fn kind(&self) -> SchemeKind {
        match self {
            Scheme::Extension(_) => SchemeKind::Ext,
            Scheme::Kernel => SchemeKind::Kernel,
            Scheme::Intel => SchemeKind::Intel,
            Scheme::Software => SchemeKind::Software,
        }
    }

    pub fn variant(v: Variant) -> Self {
        Scheme::Extension(VariantConfig::preset(v))
    }

    /// Row label: the preset name for extension variants.
    pub fn label(&self) -> String {
        match self {
            Scheme::Extension(c) => c.matches_preset().map_or_else(|| "ext".to_string(), |v| v.name().to_string()),
            other => other.kind().name().to_string(),
        }
    }

    /// `v1`..`v5`, `kernel`, `intel` or `software`.
    pub fn parse(s: &str) -> Option<Self> {
        if let Some(v) = Variant::parse(s) {
            return Some(Self::variant(v));
        }
        match s.to_ascii_lowercase().as_str() {
            "kernel" => Some(Scheme::Kernel),
            "intel" => Some(Scheme::Intel),
            "software" => Some(Scheme::Software),
            _ => None,
        }
    }

    pub fn config(&self) -> Option<&VariantConfig> {
        match self {
            Scheme::Extension(c) => Some(c),
            _ => None,
        }
    }
}

/// Deferrable server: `capacity` cycles, refilled every `period` cycles.
/// A zero period never refills.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetPolicy {
    pub capacity: u32,
    pub period: u64,
}

impl BudgetPolicy {
    pub fn new(capacity: u32, period: u64) -> Self {
        Self { capacity, period }
    }

    /// A budget that is never the limiting factor.
    pub fn unlimited() -> Self {
        Self { capacity: u32::MAX, period: 0 }
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if self.period > 0 && self.capacity as u64 > self.period {
            return Err(KernelError::InvalidPolicy);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Handle(pub u32);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KernelError {
    #[error("no free IID entry")]
    NoFreeEntry,
    #[error("permission denied")]
    PermissionDenied,
    #[error("interrupt already registered")]
    Duplicate,
    #[error("invalid handle")]
    InvalidHandle,
    #[error("handle belongs to another process")]
    ForeignHandle,
    #[error("budget capacity exceeds its period")]
    InvalidPolicy,
    #[error("invalid argument")]
    InvalidArgument,
    #[error("configuration rejected: {0}")]
    Config(#[from] crate::engine::ConfigError),
}

impl KernelError {
    /// Negative value returned in `a0` by the system call ABI.
    pub fn code(&self) -> i32 {
        match self {
            KernelError::NoFreeEntry => -1,
            KernelError::PermissionDenied => -2,
            KernelError::Duplicate => -3,
            KernelError::InvalidHandle => -4,
            KernelError::ForeignHandle => -5,
            KernelError::InvalidPolicy => -6,
            KernelError::InvalidArgument => -7,
            KernelError::Config(_) => -8,
        }
    }
}

/// System call numbers, passed in `a7`; arguments in `a0..a3`, result in
/// `a0` (negative on error).
pub mod sys {
    /// `a0` int_id, `a1` entry, `a2` capacity, `a3` period.
    pub const INT_REG: u32 = 1;
    pub const INT_DEL: u32 = 2;
    /// `a0` handle, `a1` priority.
    pub const INT_PRIO: u32 = 3;
    pub const INT_ENA: u32 = 4;
    pub const INT_DIS: u32 = 5;
    pub const YIELD: u32 = 6;
    pub const EXIT: u32 = 7;
}

/// Cycles from the interrupt to the first handler instruction reaching
/// execute, excluding the pipeline refill.
pub fn deliver(scheme: &Scheme, costs: &KernelCosts, target_active: bool) -> u64 {
    let trap = crate::engine::Calibration::default().kernel_entry();
    match scheme {
        Scheme::Extension(c) => idle_entry_total(c),
        Scheme::Kernel => trap + costs.kernel_entry + costs.kernel_entry_extra,
        Scheme::Intel if target_active => trap + costs.intel_fast_entry,
        Scheme::Intel => deliver(&Scheme::Kernel, costs, false),
        Scheme::Software if target_active => trap + costs.software_entry - costs.software_pmp,
        Scheme::Software => trap + costs.software_entry,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baseline_paths() {
        let c = KernelCosts::default();
        assert_eq!(c.kernel_entry, 634);
        assert_eq!(deliver(&Scheme::Intel, &c, false), deliver(&Scheme::Kernel, &c, false));
        assert_eq!(deliver(&Scheme::Kernel, &c, true), deliver(&Scheme::Kernel, &c, false));
        assert_eq!(deliver(&Scheme::Software, &c, false) - deliver(&Scheme::Software, &c, true), 30);
        for v in Variant::ALL {
            let s = Scheme::variant(v);
            assert_eq!(deliver(&s, &c, true), deliver(&s, &c, false));
        }
        assert_eq!(deliver(&Scheme::variant(Variant::V5), &c, true), 11);
    }

    #[test]
    fn scheme_labels_round_trip() {
        for name in ["v1", "v2", "v3", "v4", "v5", "kernel", "intel", "software"] {
            assert_eq!(Scheme::parse(name).unwrap().label(), name);
        }
        assert!(Scheme::parse("nope").is_none());
    }

    #[test]
    fn policy_capacity_bounded_by_period() {
        assert!(BudgetPolicy::new(10, 5).validate().is_err());
        assert!(BudgetPolicy::new(5, 5).validate().is_ok());
        assert!(BudgetPolicy::unlimited().validate().is_ok());
    }
}
