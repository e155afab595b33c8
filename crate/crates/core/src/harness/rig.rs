//! Two-process setup shared by the experiments: a target process that owns
//! the device handler and a background process that only computes.

use std::ops::Range;

use crate::isa::ProgramImage;
use crate::kernel::{KernelCosts, KernelError, Scheme, System};
use crate::memory::{MmioBus, FLASH_BASE, SRAM_BASE};

use super::devices::Devices;
use super::workloads::{self, CRC_BITS, FRAME_ITERS};
use super::HarnessError;

pub const TARGET_CODE: Range<u32> = FLASH_BASE + 0x1000..FLASH_BASE + 0x2000;
pub const TARGET_DATA: Range<u32> = SRAM_BASE..SRAM_BASE + 0x4000;
pub const BG_CODE: Range<u32> = FLASH_BASE + 0x2000..FLASH_BASE + 0x3000;
pub const BG_DATA: Range<u32> = SRAM_BASE + 0x4000..SRAM_BASE + 0x8000;

pub struct Rig {
    pub sys: System,
    pub target: u32,
    pub background: u32,
    pub target_img: ProgramImage,
    pub bg_img: ProgramImage,
}

impl Rig {
    /// Boot `scheme` with `dev` attached and load both programs, with
    /// `consts` predefined for the assembler. Neither process has threads
    /// yet.
    pub fn new(
        scheme: Scheme,
        costs: KernelCosts,
        dev: impl MmioBus + 'static,
        target_src: &str,
        target_caps: u32,
        bg_src: &str,
        consts: &[(&str, u32)],
    ) -> Result<Self, HarnessError> {
        let mut sys = System::boot(scheme, costs, Some(Box::new(dev)), true)?;
        let mut extra = vec![("FRAME_ITERS", FRAME_ITERS), ("CRC_BITS", CRC_BITS)];
        extra.extend_from_slice(consts);
        let target_img = workloads::build(target_src, TARGET_CODE.start, TARGET_DATA.start, &extra)?;
        let bg_img = workloads::build(bg_src, BG_CODE.start, BG_DATA.start, &extra)?;
        target_img.load_into(&mut sys.m.mem)?;
        bg_img.load_into(&mut sys.m.mem)?;
        let target = sys.create_process(TARGET_CODE, TARGET_DATA, true, target_caps);
        let background = sys.create_process(BG_CODE, BG_DATA, false, 0);
        Ok(Self { sys, target, background, target_img, bg_img })
    }

    pub fn target_sym(&self, name: &str) -> u32 {
        self.target_img.symbol(name).unwrap_or_else(|| panic!("workload symbol {name}"))
    }

    pub fn bg_sym(&self, name: &str) -> u32 {
        self.bg_img.symbol(name).unwrap_or_else(|| panic!("workload symbol {name}"))
    }

    pub fn spawn_target(&mut self) -> usize {
        let pc = self.target_sym("thread");
        self.sys.spawn(self.target, pc, TARGET_DATA.end)
    }

    pub fn spawn_background(&mut self) -> usize {
        let pc = self.bg_sym("thread");
        self.sys.spawn(self.background, pc, BG_DATA.end)
    }

    pub fn devices(&self) -> &Devices {
        devices(&self.sys)
    }

    pub fn devices_mut(&mut self) -> &mut Devices {
        self.sys.m.mem.mmio_mut().and_then(|b| b.as_any_mut().downcast_mut()).expect("devices attached")
    }

    pub fn cycle(&self) -> u64 {
        self.sys.m.state.cycle
    }

    pub fn peek(&self, addr: u32) -> u32 {
        self.sys.m.mem.peek(addr).expect("mapped")
    }

    pub fn poke(&mut self, addr: u32, value: u32) {
        self.sys.m.mem.poke(addr, value).expect("mapped");
    }
}

pub fn devices(sys: &System) -> &Devices {
    sys.m.mem.mmio().and_then(|b| b.as_any().downcast_ref()).expect("devices attached")
}

impl From<KernelError> for HarnessError {
    fn from(e: KernelError) -> Self {
        HarnessError::Kernel(e)
    }
}
