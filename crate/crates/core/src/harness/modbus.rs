//! Modbus colocation: a UART receive handler shares the core with a
//! background compute task whose frame rate is the metric.

use serde::{Deserialize, Serialize};

use crate::kernel::{BudgetPolicy, KernelCosts, Scheme};
use crate::CORE_HZ;

use super::devices::{Devices, UART_IRQ};
use super::rig::{Rig, BG_DATA};
use super::workloads::{FRAMES, MODBUS};
use super::HarnessError;

/// One second of simulated time.
pub const MODBUS_WINDOW: u64 = CORE_HZ;
pub const MODBUS_BAUDS: [u64; 9] = [9_600, 19_200, 57_600, 115_200, 230_400, 460_800, 921_600, 1_000_000, 2_000_000];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputStats {
    pub scheme: String,
    /// Zero for the unloaded run.
    pub baud: u64,
    pub frames: u64,
    pub window: u64,
    pub fps: f64,
    pub bytes: u64,
    pub overruns: u64,
    pub sustainable: bool,
}

/// Background frames completed in `window` cycles while bytes arrive at
/// `baud` (0 = no traffic). The handler's process never has a thread on
/// the core.
pub fn run_modbus_coloc(scheme: &Scheme, costs: &KernelCosts, baud: u64, window: u64, seed: u64) -> Result<ThroughputStats, HarnessError> {
    if window == 0 {
        return Err(HarnessError::Invalid("window must be positive".into()));
    }
    let mut rig = Rig::new(scheme.clone(), *costs, Devices::new(0, baud, seed), MODBUS, 1 << UART_IRQ, FRAMES, &[])?;
    rig.spawn_background();
    let entry = rig.target_sym("handler");
    let h = rig.sys.int_reg(rig.target, UART_IRQ, entry, BudgetPolicy::unlimited())?;
    rig.sys.int_ena(rig.target, h)?;
    rig.sys.start();
    let start = rig.cycle();
    if baud > 0 {
        rig.devices_mut().uart.start(start);
    }
    rig.sys.run_until(start + window)?;
    let frames = rig.peek(BG_DATA.start) as u64;
    let uart = &rig.devices().uart;
    Ok(ThroughputStats {
        scheme: scheme.label(),
        baud,
        frames,
        window,
        fps: frames as f64 * CORE_HZ as f64 / window as f64,
        bytes: uart.received,
        overruns: uart.overruns,
        sustainable: uart.overruns == 0 && uart.read + 1 >= uart.received,
    })
}

/// Highest baud in `bauds` at which every byte is serviced in time.
pub fn max_sustainable_baud(scheme: &Scheme, costs: &KernelCosts, bauds: &[u64], window: u64) -> Result<u64, HarnessError> {
    let mut best = 0;
    for &b in bauds {
        if run_modbus_coloc(scheme, costs, b, window, 0)?.sustainable {
            best = best.max(b);
        }
    }
    Ok(best)
}
