//! The user-level interrupt extension: IID lookup, parallel entry
//! scheduling, register banking and spilling, budget countdown, forced
//! return and nesting.

pub mod budget;
pub mod calib;
pub mod context;
pub mod iid;
pub mod machine;
pub mod schedule;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use budget::BudgetEntry;
pub use calib::Calibration;
pub use context::{BankSet, ContextFrame, FRAME_WORDS};
pub use iid::{IidEntry, IidLookup};
pub use machine::{Machine, MachineEvent, SimError};
pub use schedule::{Action, EntrySchedule, Segment};

/// Where the IID mapping lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IidMode {
    /// Indexed table in main SRAM, one record per interrupt number.
    TableInSram,
    /// Content-addressable registers inside the core.
    Cam,
    /// CAM contents kept in RAM. Infeasible: a CAM needs a parallel lookup.
    CamInRam,
    /// Indexed table held in core registers. Infeasible at useful sizes.
    TableInCpu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StackPort {
    MainSram,
    TcmStack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TablePort {
    MainSram,
    TcmTable,
}

/// How the kernel-managed PMP set is preserved on entry from a thread or
/// the kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelPmp {
    Shadow,
    Spill,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    V1,
    V2,
    V3,
    V4,
    V5,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::V1, Variant::V2, Variant::V3, Variant::V4, Variant::V5];

    pub fn name(self) -> &'static str {
        match self {
            Variant::V1 => "v1",
            Variant::V2 => "v2",
            Variant::V3 => "v3",
            Variant::V4 => "v4",
            Variant::V5 => "v5",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name().eq_ignore_ascii_case(s))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("IID design {0:?} is infeasible: a CAM needs parallel lookup and a table needs memory")]
    InfeasibleIid(IidMode),
    #[error("cam_entries must be 16, 32 or 48, got {0}")]
    CamEntries(usize),
    #[error("extra_banks must be at most 3, got {0}")]
    ExtraBanks(usize),
    #[error("pmp_entries must be between 1 and {max}, got {got}")]
    PmpEntries { got: usize, max: usize },
}

/// Placement and sizing knobs selecting a point in the design space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantConfig {
    pub iid: IidMode,
    #[serde(default = "default_cam_entries")]
    pub cam_entries: usize,
    pub stack_port: StackPort,
    pub table_port: TablePort,
    pub extra_banks: usize,
    #[serde(default = "default_kernel_pmp")]
    pub kernel_pmp: KernelPmp,
    /// PMP entries per protection domain.
    #[serde(default = "default_pmp_entries")]
    pub pmp_entries: usize,
    #[serde(default)]
    pub calibration: Calibration,
}

fn default_cam_entries() -> usize {
    16
}

fn default_kernel_pmp() -> KernelPmp {
    KernelPmp::Shadow
}

/// Four entries per domain; see `calib` for why the anchors pin this.
pub const DEFAULT_PMP_ENTRIES: usize = 4;

fn default_pmp_entries() -> usize {
    DEFAULT_PMP_ENTRIES
}

impl VariantConfig {
    pub fn preset(v: Variant) -> Self {
        let (iid, stack_port, table_port, extra_banks) = match v {
            Variant::V1 => (IidMode::TableInSram, StackPort::MainSram, TablePort::MainSram, 0),
            Variant::V2 => (IidMode::TableInSram, StackPort::TcmStack, TablePort::MainSram, 0),
            Variant::V3 => (IidMode::TableInSram, StackPort::TcmStack, TablePort::MainSram, 1),
            Variant::V4 => (IidMode::TableInSram, StackPort::TcmStack, TablePort::TcmTable, 1),
            Variant::V5 => (IidMode::Cam, StackPort::TcmStack, TablePort::TcmTable, 1),
        };
        Self {
            iid,
            cam_entries: 16,
            stack_port,
            table_port,
            extra_banks,
            kernel_pmp: KernelPmp::Shadow,
            pmp_entries: DEFAULT_PMP_ENTRIES,
            calibration: Calibration::default(),
        }
    }

    pub fn with_kernel_pmp(mut self, k: KernelPmp) -> Self {
        self.kernel_pmp = k;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match self.iid {
            IidMode::CamInRam | IidMode::TableInCpu => return Err(ConfigError::InfeasibleIid(self.iid)),
            IidMode::Cam if !matches!(self.cam_entries, 16 | 32 | 48) => {
                return Err(ConfigError::CamEntries(self.cam_entries))
            }
            _ => {}
        }
        if self.extra_banks > 3 {
            return Err(ConfigError::ExtraBanks(self.extra_banks));
        }
        if !(1..=crate::protection::MAX_ENTRIES).contains(&self.pmp_entries) {
            return Err(ConfigError::PmpEntries { got: self.pmp_entries, max: crate::protection::MAX_ENTRIES });
        }
        Ok(())
    }

    pub fn uses_tcm_stack(&self) -> bool {
        self.stack_port == StackPort::TcmStack
    }

    pub fn uses_tcm_table(&self) -> bool {
        self.table_port == TablePort::TcmTable
    }

    /// Which named preset this configuration equals, if any.
    pub fn matches_preset(&self) -> Option<Variant> {
        Variant::ALL.into_iter().find(|&v| {
            let p = Self::preset(v);
            p.iid == self.iid
                && p.stack_port == self.stack_port
                && p.table_port == self.table_port
                && p.extra_banks == self.extra_banks
                && (self.iid != IidMode::Cam || p.cam_entries == self.cam_entries)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid_and_distinct() {
        for v in Variant::ALL {
            let c = VariantConfig::preset(v);
            c.validate().unwrap();
            assert_eq!(c.matches_preset(), Some(v));
        }
    }

    #[test]
    fn infeasible_cells_rejected() {
        let mut c = VariantConfig::preset(Variant::V5);
        c.iid = IidMode::CamInRam;
        assert!(matches!(c.validate(), Err(ConfigError::InfeasibleIid(_))));
        c.iid = IidMode::TableInCpu;
        assert!(matches!(c.validate(), Err(ConfigError::InfeasibleIid(_))));
        let mut c = VariantConfig::preset(Variant::V5);
        c.cam_entries = 20;
        assert!(c.validate().is_err());
    }

    #[test]
    fn variant_names_parse() {
        assert_eq!(Variant::parse("V3"), Some(Variant::V3));
        assert_eq!(Variant::parse("v9"), None);
    }
}
