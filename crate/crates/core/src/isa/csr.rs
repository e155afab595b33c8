//! Control and status registers, including the user-level interrupt set.
//!
//! CSR numbers for the extension live in the machine-mode custom ranges:
//!
//! | CSR          | number          | notes                                   |
//! |--------------|-----------------|-----------------------------------------|
//! | `muictl`     | `0x7C0`         | `[31:2]` IID table base, `[1]` HW present (RO), `[0]` enable |
//! | `muistk`     | `0x7C1`         | hardware save stack base                |
//! | `muiepc`     | `0x7C2`         | interrupted PC                          |
//! | `muicause`   | `0x7C3`         | forced-return cause                     |
//! | `mtimecmp`   | `0x7C4`/`0x7C5` | system timer compare, low/high          |
//! | `iidnumX`    | `0x7D0 + X`     | CAM interrupt number, X < 48            |
//! | `iidpmpX`    | `0xBC0 + X`     | CAM PMP record pointer                  |
//! | `iidtimX`    | `0x5C0 + X`     | CAM budget entry pointer                |

use thiserror::Error;

use super::Mode;

pub const MSTATUS: u16 = 0x300;
pub const MTVEC: u16 = 0x305;
pub const MSCRATCH: u16 = 0x340;
pub const MEPC: u16 = 0x341;
pub const MCAUSE: u16 = 0x342;
pub const MTVAL: u16 = 0x343;

pub const MUICTL: u16 = 0x7c0;
pub const MUISTK: u16 = 0x7c1;
pub const MUIEPC: u16 = 0x7c2;
pub const MUICAUSE: u16 = 0x7c3;
pub const MTIMECMP: u16 = 0x7c4;
pub const MTIMECMPH: u16 = 0x7c5;

pub const IIDNUM_BASE: u16 = 0x7d0;
pub const IIDPMP_BASE: u16 = 0xbc0;
pub const IIDTIM_BASE: u16 = 0x5c0;
/// Largest CAM the CSR map can address.
pub const MAX_CAM_ENTRIES: usize = 48;

pub const CYCLE: u16 = 0xc00;
pub const TIME: u16 = 0xc01;
pub const CYCLEH: u16 = 0xc80;
pub const TIMEH: u16 = 0xc81;

pub const MSTATUS_MIE: u32 = 1 << 3;
pub const MSTATUS_MPIE: u32 = 1 << 7;
pub const MSTATUS_MPP: u32 = 0b11 << 11;

pub const MUICTL_ENABLE: u32 = 1 << 0;
pub const MUICTL_PRESENT: u32 = 1 << 1;

/// `muicause` encodings.
pub const CAUSE_SPATIAL: u32 = 1;
pub const CAUSE_TEMPORAL: u32 = 2;
pub const CAUSE_EXCEPTION_BASE: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsrAccess {
    Read,
    Write,
    Set,
    Clear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum CsrError {
    #[error("unknown CSR {0:#05x}")]
    Unknown(u16),
    #[error("CSR {0:#05x} is not accessible from user mode")]
    Privilege(u16),
    #[error("CSR {0:#05x} is read-only")]
    ReadOnly(u16),
}

/// CAM-resident IID registers (`iidnumX`, `iidpmpX`, `iidtimX`).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CamRegs {
    pub num: Vec<u32>,
    pub pmp: Vec<u32>,
    pub tim: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsrFile {
    pub mstatus: u32,
    pub mtvec: u32,
    pub mscratch: u32,
    pub mepc: u32,
    pub mcause: u32,
    pub mtval: u32,
    muictl: u32,
    pub muistk: u32,
    pub muiepc: u32,
    pub muicause: u32,
    pub mtime: u64,
    pub mtimecmp: u64,
    /// Whether the extension hardware is built in. Without it every `mu*`
    /// CSR is unknown, exactly as on the baseline core.
    extension: bool,
    pub cam: CamRegs,
}

impl CsrFile {
    /// A CSR file for a core built without the extension.
    pub fn baseline() -> Self {
        Self {
            mstatus: 0,
            mtvec: 0,
            mscratch: 0,
            mepc: 0,
            mcause: 0,
            mtval: 0,
            muictl: 0,
            muistk: 0,
            muiepc: 0,
            muicause: 0,
            mtime: 0,
            mtimecmp: u64::MAX,
            extension: false,
            cam: CamRegs::default(),
        }
    }

    /// A CSR file with the extension present and `cam_entries` CAM slots
    /// (zero for table-mode IID).
    pub fn with_extension(cam_entries: usize) -> Self {
        assert!(cam_entries <= MAX_CAM_ENTRIES);
        Self {
            muictl: MUICTL_PRESENT,
            extension: true,
            cam: CamRegs {
                num: vec![0; cam_entries],
                pmp: vec![0; cam_entries],
                tim: vec![0; cam_entries],
            },
            ..Self::baseline()
        }
    }

    pub fn has_extension(&self) -> bool {
        self.extension
    }

    pub fn muictl(&self) -> u32 {
        self.muictl
    }

    pub fn uintr_enabled(&self) -> bool {
        self.muictl & MUICTL_ENABLE != 0
    }

    /// IID table base address (`muictl[31:2]`, word aligned).
    pub fn iid_base(&self) -> u32 {
        self.muictl & !0b11
    }

    fn is_extension_csr(csr: u16) -> bool {
        matches!(csr, MUICTL..=MTIMECMPH)
            || Self::cam_slot(csr).is_some()
    }

    fn cam_slot(csr: u16) -> Option<(usize, u8)> {
        let max = MAX_CAM_ENTRIES as u16;
        if (IIDNUM_BASE..IIDNUM_BASE + max).contains(&csr) {
            Some(((csr - IIDNUM_BASE) as usize, 0))
        } else if (IIDPMP_BASE..IIDPMP_BASE + max).contains(&csr) {
            Some(((csr - IIDPMP_BASE) as usize, 1))
        } else if (IIDTIM_BASE..IIDTIM_BASE + max).contains(&csr) {
            Some(((csr - IIDTIM_BASE) as usize, 2))
        } else {
            None
        }
    }

    fn read_raw(&self, csr: u16, cycle: u64) -> Result<u32, CsrError> {
        Ok(match csr {
            MSTATUS => self.mstatus,
            MTVEC => self.mtvec,
            MSCRATCH => self.mscratch,
            MEPC => self.mepc,
            MCAUSE => self.mcause,
            MTVAL => self.mtval,
            CYCLE => cycle as u32,
            CYCLEH => (cycle >> 32) as u32,
            TIME => self.mtime as u32,
            TIMEH => (self.mtime >> 32) as u32,
            MUICTL if self.extension => self.muictl,
            MUISTK if self.extension => self.muistk,
            MUIEPC if self.extension => self.muiepc,
            MUICAUSE if self.extension => self.muicause,
            MTIMECMP if self.extension => self.mtimecmp as u32,
            MTIMECMPH if self.extension => (self.mtimecmp >> 32) as u32,
            _ => match (self.extension, Self::cam_slot(csr)) {
                (true, Some((slot, kind))) if slot < self.cam.num.len() => match kind {
                    0 => self.cam.num[slot],
                    1 => self.cam.pmp[slot],
                    _ => self.cam.tim[slot],
                },
                _ => return Err(CsrError::Unknown(csr)),
            },
        })
    }

    fn write_raw(&mut self, csr: u16, value: u32) -> Result<(), CsrError> {
        match csr {
            MSTATUS => self.mstatus = value & (MSTATUS_MIE | MSTATUS_MPIE | MSTATUS_MPP),
            MTVEC => self.mtvec = value & !0b11,
            MSCRATCH => self.mscratch = value,
            MEPC => self.mepc = value & !0b11,
            MCAUSE => self.mcause = value,
            MTVAL => self.mtval = value,
            CYCLE | CYCLEH | TIME | TIMEH => return Err(CsrError::ReadOnly(csr)),
            // bit 1 is hard-wired to the build's extension presence
            MUICTL if self.extension => self.muictl = (value & !MUICTL_PRESENT) | MUICTL_PRESENT,
            MUISTK if self.extension => self.muistk = value & !0b11,
            MUIEPC if self.extension => self.muiepc = value & !0b11,
            MUICAUSE if self.extension => self.muicause = value,
            MTIMECMP if self.extension => {
                self.mtimecmp = (self.mtimecmp & !0xffff_ffff) | value as u64
            }
            MTIMECMPH if self.extension => {
                self.mtimecmp = (self.mtimecmp & 0xffff_ffff) | (value as u64) << 32
            }
            _ => match (self.extension, Self::cam_slot(csr)) {
                (true, Some((slot, kind))) if slot < self.cam.num.len() => match kind {
                    0 => self.cam.num[slot] = value,
                    1 => self.cam.pmp[slot] = value,
                    _ => self.cam.tim[slot] = value,
                },
                _ => return Err(CsrError::Unknown(csr)),
            },
        }
        Ok(())
    }

    /// Read-modify-write access with privilege checking. Returns the old
    /// value. `Read` never writes; `Set`/`Clear` with a zero mask behave as
    /// reads, matching `csrrs rd, csr, x0`.
    pub fn access(
        &mut self,
        mode: Mode,
        cycle: u64,
        csr: u16,
        op: CsrAccess,
        value: u32,
    ) -> Result<u32, CsrError> {
        let user_readable = matches!(csr, CYCLE | CYCLEH | TIME | TIMEH);
        if mode == Mode::User && !user_readable {
            // Unknown numbers still report as unknown so a baseline core and
            // an extension core disagree only on extension CSRs.
            self.read_raw(csr, cycle)?;
            return Err(CsrError::Privilege(csr));
        }
        let old = self.read_raw(csr, cycle)?;
        let new = match op {
            CsrAccess::Read => return Ok(old),
            CsrAccess::Write => value,
            CsrAccess::Set if value == 0 => return Ok(old),
            CsrAccess::Clear if value == 0 => return Ok(old),
            CsrAccess::Set => old | value,
            CsrAccess::Clear => old & !value,
        };
        self.write_raw(csr, new)?;
        Ok(old)
    }

    /// Direct hardware-side write of `muictl` used by tests and boot code
    /// that bypasses instruction execution.
    pub fn set_muictl(&mut self, value: u32) {
        if self.extension {
            self.muictl = (value & !MUICTL_PRESENT) | MUICTL_PRESENT;
        }
    }

    pub fn is_extension_number(csr: u16) -> bool {
        Self::is_extension_csr(csr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(f: &mut CsrFile, csr: u16, op: CsrAccess, v: u32) -> Result<u32, CsrError> {
        f.access(Mode::Machine, 0, csr, op, v)
    }

    #[test]
    fn enable_sets_base_and_flag() {
        let mut f = CsrFile::with_extension(0);
        m(&mut f, MUICTL, CsrAccess::Write, 0x2000_1000 | 0b01).unwrap();
        assert!(f.uintr_enabled());
        assert_eq!(f.iid_base(), 0x2000_1000);
    }

    #[test]
    fn present_bit_ignores_writes() {
        let mut f = CsrFile::with_extension(16);
        m(&mut f, MUICTL, CsrAccess::Write, 0).unwrap();
        assert_eq!(f.muictl() & MUICTL_PRESENT, MUICTL_PRESENT);
        m(&mut f, MUICTL, CsrAccess::Clear, MUICTL_PRESENT).unwrap();
        assert_eq!(m(&mut f, MUICTL, CsrAccess::Read, 0).unwrap(), MUICTL_PRESENT);
    }

    #[test]
    fn muistk_round_trip() {
        let mut f = CsrFile::with_extension(0);
        m(&mut f, MUISTK, CsrAccess::Write, 0x3000_2000).unwrap();
        assert_eq!(m(&mut f, MUISTK, CsrAccess::Read, 0).unwrap(), 0x3000_2000);
    }

    #[test]
    fn low_bits_masked_from_base() {
        let mut f = CsrFile::with_extension(0);
        f.set_muictl(0x2000_0103);
        assert_eq!(f.iid_base(), 0x2000_0100);
    }

    #[test]
    fn user_mode_rejected() {
        let mut f = CsrFile::with_extension(0);
        assert_eq!(
            f.access(Mode::User, 0, MUISTK, CsrAccess::Write, 1),
            Err(CsrError::Privilege(MUISTK))
        );
        assert!(f.access(Mode::User, 0, TIME, CsrAccess::Read, 0).is_ok());
    }

    #[test]
    fn unknown_and_baseline() {
        let mut f = CsrFile::baseline();
        assert_eq!(m(&mut f, MUICTL, CsrAccess::Read, 0), Err(CsrError::Unknown(MUICTL)));
        assert_eq!(m(&mut f, 0x123, CsrAccess::Read, 0), Err(CsrError::Unknown(0x123)));
    }

    #[test]
    fn cam_slots_bounded_by_build() {
        let mut f = CsrFile::with_extension(16);
        m(&mut f, IIDNUM_BASE + 15, CsrAccess::Write, 7).unwrap();
        assert_eq!(f.cam.num[15], 7);
        assert_eq!(
            m(&mut f, IIDNUM_BASE + 16, CsrAccess::Write, 7),
            Err(CsrError::Unknown(IIDNUM_BASE + 16))
        );
    }
}
