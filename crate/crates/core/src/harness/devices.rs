//! Memory-mapped devices used by the experiments.
//!
//! Register map, offsets from the MMIO base:
//!
//! ```text
//! 0x00  timer.count   RO  cycles left until the next fire (period at the fire cycle)
//! 0x04  timer.reload  RW  period loaded at each fire
//! 0x08  timer.ctrl    RW  bit 0 enable
//! 0x10  pin.level     RW  bit 0 output level; every change is logged
//! 0x20  uart.data     RO  last received byte; reading clears rx-ready
//! 0x24  uart.status   RO  bit 0 rx-ready, bit 1 overrun seen
//! ```

use std::any::Any;

use crate::memory::MmioBus;

pub const TIMER_COUNT: u32 = 0x00;
pub const TIMER_RELOAD: u32 = 0x04;
pub const TIMER_CTRL: u32 = 0x08;
pub const PIN_LEVEL: u32 = 0x10;
pub const UART_DATA: u32 = 0x20;
pub const UART_STATUS: u32 = 0x24;

pub const TIMER_IRQ: u32 = 0;
pub const UART_IRQ: u32 = 2;

/// Auto-reloading down-counter raising [`TIMER_IRQ`] when it wraps.
#[derive(Debug, Clone, Default)]
pub struct ReloadTimer {
    pub reload: u32,
    enabled: bool,
    /// Cycle of the last fire (or of enabling).
    last: u64,
    /// Period currently counting down.
    current: u64,
    pending: Option<u64>,
    pub fires: u64,
    /// Fires that arrived while the previous one was still pending.
    pub lost: u64,
    /// `(fire cycle, acknowledge cycle)` per accepted interrupt.
    pub acks: Vec<(u64, u64)>,
    /// `(sample cycle, count)` per software read of `count`.
    pub count_reads: Vec<(u64, u32)>,
}

impl ReloadTimer {
    pub fn new(period: u32) -> Self {
        Self { reload: period, ..Self::default() }
    }

    pub fn start(&mut self, cycle: u64) {
        self.enabled = true;
        self.last = cycle;
        self.current = self.reload as u64;
    }

    pub fn stop(&mut self) {
        self.enabled = false;
    }

    pub fn next_fire(&self) -> Option<u64> {
        (self.enabled && self.current > 0).then(|| self.last + self.current)
    }

    fn advance(&mut self, cycle: u64) {
        while let Some(f) = self.next_fire() {
            if f > cycle {
                break;
            }
            self.fires += 1;
            if self.pending.is_some() {
                self.lost += 1;
            }
            self.pending = Some(f);
            self.last = f;
            self.current = self.reload as u64;
        }
    }

    fn count(&self, cycle: u64) -> u32 {
        if !self.enabled {
            return 0;
        }
        (self.current - (cycle - self.last)) as u32
    }
}

/// Output pin with an edge log.
#[derive(Debug, Clone, Default)]
pub struct PulsePin {
    pub level: u32,
    /// `(cycle, new level)` for every change.
    pub edges: Vec<(u64, u32)>,
}

impl PulsePin {
    fn write(&mut self, value: u32, cycle: u64) {
        let v = value & 1;
        if v != self.level {
            self.level = v;
            self.edges.push((cycle, v));
        }
    }
}

/// Receive side of a UART fed at a fixed baud rate, one interrupt per byte.
#[derive(Debug, Clone)]
pub struct UartByteSource {
    pub core_hz: u64,
    pub baud: u64,
    pub bits_per_byte: u64,
    enabled: bool,
    start: u64,
    /// Index of the next byte to arrive.
    next: u64,
    data: u32,
    rx_ready: bool,
    pending: bool,
    pub received: u64,
    pub read: u64,
    /// Bytes that landed on top of an unread one.
    pub overruns: u64,
    seed: u64,
}

impl UartByteSource {
    pub fn new(core_hz: u64, baud: u64, seed: u64) -> Self {
        Self {
            core_hz,
            baud,
            bits_per_byte: 10,
            enabled: false,
            start: 0,
            next: 1,
            data: 0,
            rx_ready: false,
            pending: false,
            received: 0,
            read: 0,
            overruns: 0,
            seed,
        }
    }

    pub fn start(&mut self, cycle: u64) {
        self.enabled = true;
        self.start = cycle;
        self.next = 1;
    }

    pub fn stop(&mut self) {
        self.enabled = false;
    }

    /// Cycles between byte arrivals (fractional).
    pub fn interval(&self) -> f64 {
        self.core_hz as f64 * self.bits_per_byte as f64 / self.baud as f64
    }

    /// Arrival cycle of byte `k` (1-based): integer arithmetic so the
    /// cadence never drifts.
    pub fn arrival(&self, k: u64) -> u64 {
        self.start + (k as u128 * self.core_hz as u128 * self.bits_per_byte as u128 / self.baud as u128) as u64
    }

    fn advance(&mut self, cycle: u64) {
        if !self.enabled {
            return;
        }
        while self.arrival(self.next) <= cycle {
            if self.rx_ready {
                self.overruns += 1;
            }
            let k = self.next;
            self.data = ((k ^ self.seed).wrapping_mul(0x9e37_79b9) >> 7) as u32 & 0xff;
            self.rx_ready = true;
            self.pending = true;
            self.received += 1;
            self.next += 1;
        }
    }
}

/// The experiment device window.
#[derive(Debug, Clone)]
pub struct Devices {
    pub timer: ReloadTimer,
    pub pin: PulsePin,
    pub uart: UartByteSource,
}

impl Devices {
    pub fn new(timer_period: u32, baud: u64, seed: u64) -> Self {
        Self { timer: ReloadTimer::new(timer_period), pin: PulsePin::default(), uart: UartByteSource::new(crate::CORE_HZ, baud, seed) }
    }

    fn advance(&mut self, cycle: u64) {
        self.timer.advance(cycle);
        self.uart.advance(cycle);
    }
}

impl MmioBus for Devices {
    fn read(&mut self, offset: u32, cycle: u64) -> u32 {
        self.advance(cycle);
        match offset {
            TIMER_COUNT => {
                let c = self.timer.count(cycle);
                self.timer.count_reads.push((cycle, c));
                c
            }
            TIMER_RELOAD => self.timer.reload,
            TIMER_CTRL => self.timer.enabled as u32,
            PIN_LEVEL => self.pin.level,
            UART_DATA => {
                if self.uart.rx_ready {
                    self.uart.read += 1;
                }
                self.uart.rx_ready = false;
                self.uart.data
            }
            UART_STATUS => self.uart.rx_ready as u32 | ((self.uart.overruns > 0) as u32) << 1,
            _ => 0,
        }
    }

    fn write(&mut self, offset: u32, value: u32, cycle: u64) {
        self.advance(cycle);
        match offset {
            TIMER_RELOAD => self.timer.reload = value,
            TIMER_CTRL => {
                if value & 1 != 0 && !self.timer.enabled {
                    self.timer.start(cycle);
                } else if value & 1 == 0 {
                    self.timer.stop();
                }
            }
            PIN_LEVEL => self.pin.write(value, cycle),
            _ => {}
        }
    }

    fn pending(&mut self, cycle: u64) -> u32 {
        self.advance(cycle);
        (self.timer.pending.is_some() as u32) << TIMER_IRQ | (self.uart.pending as u32) << UART_IRQ
    }

    fn ack(&mut self, line: u32, cycle: u64) {
        match line {
            TIMER_IRQ => {
                if let Some(f) = self.timer.pending.take() {
                    self.timer.acks.push((f, cycle));
                }
            }
            UART_IRQ => self.uart.pending = false,
            _ => {}
        }
    }

    fn next_event(&self, now: u64) -> Option<u64> {
        let t = self.timer.next_fire();
        let u = self.uart.enabled.then(|| self.uart.arrival(self.uart.next));
        [t, u].into_iter().flatten().filter(|&c| c > now).min()
    }

    fn as_any(&self) -> &dyn Any {
        self
    }

    fn as_any_mut(&mut self) -> &mut dyn Any {
        self
    }
}

/// Interrupt lines raised at scripted cycles; a line stays asserted until
/// acknowledged. No registers.
#[derive(Debug, Clone, Default)]
pub struct ScriptedLines {
    /// `(cycle, line)`, sorted by cycle.
    events: Vec<(u64, u32)>,
    next: usize,
    asserted: u32,
    pub acks: Vec<(u32, u64)>,
}

impl ScriptedLines {
    pub fn new(mut events: Vec<(u64, u32)>) -> Self {
        events.sort_unstable();
        Self { events, ..Self::default() }
    }
}

impl MmioBus for ScriptedLines {
    fn read(&mut self, _offset: u32, _cycle: u64) -> u32 {
        0
    }

    fn write(&mut self, _offset: u32, _value: u32, _cycle: u64) {}

    fn pending(&mut self, cycle: u64) -> u32 {
        while let Some(&(c, line)) = self.events.get(self.next) {
            if c > cycle {
                break;
            }
            self.asserted |= 1 << line;
            self.next += 1;
        }
        self.asserted
    }

    fn ack(&mut self, line: u32, cycle: u64) {
        self.asserted &= !(1 << line);
        self.acks.push((line, cycle));
    }

    fn next_event(&self, now: u64) -> Option<u64> {
        self.events[self.next..].iter().map(|e| e.0).find(|&c| c > now)
    }

    fn as_any(&self) -> &dyn Any {
        self
    }

    fn as_any_mut(&mut self) -> &mut dyn Any {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timer_fires_every_period_and_counts_lost() {
        let mut t = ReloadTimer::new(100);
        t.start(0);
        t.advance(99);
        assert_eq!(t.fires, 0);
        assert_eq!(t.count(99), 1);
        t.advance(100);
        assert_eq!((t.fires, t.pending), (1, Some(100)));
        assert_eq!(t.count(100), 100);
        t.advance(250);
        assert_eq!((t.fires, t.lost, t.pending), (2, 1, Some(200)));
    }

    #[test]
    fn uart_cadence_is_ten_bits_per_byte() {
        let mut u = UartByteSource::new(50_000_000, 115_200, 1);
        u.start(0);
        assert_eq!(u.arrival(1), 4340);
        assert_eq!(u.arrival(1000), 4_340_277);
        u.advance(4340 * 2 + 10);
        assert_eq!((u.received, u.overruns), (2, 1));
    }

    #[test]
    fn pin_logs_only_changes() {
        let mut p = PulsePin::default();
        p.write(1, 5);
        p.write(1, 6);
        p.write(0, 9);
        assert_eq!(p.edges, vec![(5, 1), (9, 0)]);
    }
}
