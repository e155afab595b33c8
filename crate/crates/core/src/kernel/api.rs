//! The user-interrupt system calls and budget replenishment.

use crate::engine::iid::{table_record_addr, vector_addr, IidEntry, IID_ENABLED, IID_TABLE_ENTRIES};
use crate::engine::{BudgetEntry, IidMode};
use crate::engine::machine::IRQ_MTIMER;
use crate::protection::{AccessKind, PmpSet};

use super::layout::{pmp_record_stride, pmp_records_base, BUDGETS, IID_BASE};
use super::system::Registration;
use super::{BudgetPolicy, Handle, KernelError, System};

impl System {
    fn reg_mut(&mut self, proc: u32, h: Handle) -> Result<&mut Registration, KernelError> {
        let r = self.regs.get_mut(h.0 as usize).and_then(Option::as_mut).ok_or(KernelError::InvalidHandle)?;
        if r.proc != proc {
            return Err(KernelError::ForeignHandle);
        }
        Ok(r)
    }

    /// Live IID allocations.
    pub fn live_allocations(&self) -> usize {
        self.regs.iter().flatten().count()
    }

    /// Most allocations the IID design can hold.
    pub fn iid_capacity(&self) -> usize {
        match self.scheme.config() {
            Some(c) if c.iid == IidMode::Cam => c.cam_entries,
            _ => IID_TABLE_ENTRIES as usize,
        }
    }

    /// PMP record the hardware loads for `h`, if it has one.
    pub fn handler_pmp(&self, h: Handle) -> Option<PmpSet> {
        let r = self.regs.get(h.0 as usize)?.as_ref()?;
        self.scheme.config()?;
        let words = self.m.mem.read_words(r.pmp_ptr, self.m.pmp_words()).ok()?;
        Some(PmpSet::decode(&words, r.proc))
    }

    pub fn budget_ptr(&self, h: Handle) -> Option<u32> {
        self.regs.get(h.0 as usize)?.as_ref().map(|r| r.budget_ptr)
    }

    pub fn pmp_ptr(&self, h: Handle) -> Option<u32> {
        self.regs.get(h.0 as usize)?.as_ref().map(|r| r.pmp_ptr)
    }

    /// Register `entry` as the handler for `int_id` on behalf of `proc`.
    /// The interrupt stays disabled until [`System::int_ena`].
    pub fn int_reg(&mut self, proc: u32, int_id: u32, entry: u32, policy: BudgetPolicy) -> Result<Handle, KernelError> {
        let p = self.procs.get(proc as usize).ok_or(KernelError::InvalidArgument)?;
        if int_id >= IRQ_MTIMER || p.caps & (1 << int_id) == 0 {
            return Err(KernelError::PermissionDenied);
        }
        if !entry.is_multiple_of(4) || !p.pmp_set.allows(entry, 4, AccessKind::Exec) {
            return Err(KernelError::PermissionDenied);
        }
        if self.regs.iter().flatten().any(|r| r.line == int_id) {
            return Err(KernelError::Duplicate);
        }
        policy.validate()?;
        let handle = Handle(self.regs.iter().position(Option::is_none).unwrap_or(self.regs.len()) as u32);
        let now = self.m.state.cycle;
        let mut reg = Registration {
            proc,
            line: int_id,
            entry,
            policy,
            pmp_ptr: 0,
            budget_ptr: 0,
            cam_slot: None,
            enabled: false,
            prio: 1,
            next_replenish: now + policy.period,
        };

        if let Some(cfg) = self.scheme.config().cloned() {
            let cam_slot = if cfg.iid == IidMode::Cam {
                let free = self.m.state.csrs.cam.num.iter().position(|n| n & crate::engine::iid::IID_VALID == 0);
                Some(free.ok_or(KernelError::NoFreeEntry)?)
            } else {
                None
            };
            let budget_slot = self.budget_slots.iter().position(|u| !u).ok_or(KernelError::NoFreeEntry)?;
            // one record per process, shared by all its handlers
            let pmp_ptr = match self.procs[proc as usize].pmp_record {
                Some((addr, _)) => addr,
                None => {
                    let slot = self.pmp_slots.iter().position(|u| !u).ok_or(KernelError::NoFreeEntry)?;
                    self.pmp_slots[slot] = true;
                    let addr = pmp_records_base(&cfg) + slot as u32 * pmp_record_stride(cfg.pmp_entries);
                    let words = self.procs[proc as usize].pmp_set.encode();
                    self.m.mem.write_words(addr, &words).expect("PMP record area is mapped");
                    self.procs[proc as usize].pmp_record = Some((addr, 0));
                    addr
                }
            };
            if let Some((_, users)) = &mut self.procs[proc as usize].pmp_record {
                *users += 1;
            }
            self.budget_slots[budget_slot] = true;
            let budget_ptr = BUDGETS + budget_slot as u32 * 16;
            let b = BudgetEntry { remaining: policy.capacity, granted: policy.capacity, policy_ref: handle.0 };
            self.m.mem.write_words(budget_ptr, &b.encode()).expect("budget area is mapped");

            let e = IidEntry { int_num: int_id, pmp_ptr, budget_ptr, enabled: false };
            match cam_slot {
                Some(i) => {
                    let cam = &mut self.m.state.csrs.cam;
                    cam.num[i] = e.cam_num();
                    cam.pmp[i] = pmp_ptr;
                    cam.tim[i] = budget_ptr;
                }
                None => {
                    let addr = table_record_addr(IID_BASE, int_id).expect("line is below the table size");
                    self.m.mem.write_words(addr, &e.encode()).expect("IID table is mapped");
                }
            }
            self.m.mem.poke(vector_addr(IID_BASE, int_id), entry).expect("vector table is mapped");
            reg.pmp_ptr = pmp_ptr;
            reg.budget_ptr = budget_ptr;
            reg.cam_slot = cam_slot;
        }
        self.m.prio[int_id as usize] = 1;
        let idx = handle.0 as usize;
        if idx == self.regs.len() {
            self.regs.push(Some(reg));
        } else {
            self.regs[idx] = Some(reg);
        }
        self.procs[proc as usize].iid_allocations.push(handle);
        self.update_tick_pub();
        Ok(handle)
    }

    pub fn int_del(&mut self, proc: u32, h: Handle) -> Result<(), KernelError> {
        self.reg_mut(proc, h)?;
        let r = self.regs[h.0 as usize].take().expect("checked");
        if self.scheme.config().is_some() {
            match r.cam_slot {
                Some(i) => {
                    let cam = &mut self.m.state.csrs.cam;
                    cam.num[i] = 0;
                    cam.pmp[i] = 0;
                    cam.tim[i] = 0;
                }
                None => {
                    let addr = table_record_addr(IID_BASE, r.line).expect("registered line");
                    self.m.mem.write_words(addr, &[0; 4]).expect("IID table is mapped");
                }
            }
            self.m.mem.poke(vector_addr(IID_BASE, r.line), 0).expect("vector table is mapped");
            let slot = ((r.budget_ptr - BUDGETS) / 16) as usize;
            self.budget_slots[slot] = false;
            self.m.mem.write_words(r.budget_ptr, &[0; 3]).expect("budget area is mapped");
            let p = &mut self.procs[proc as usize];
            if let Some((addr, users)) = &mut p.pmp_record {
                *users -= 1;
                if *users == 0 {
                    let cfg = self.scheme.config().expect("checked");
                    let slot = ((*addr - pmp_records_base(cfg)) / pmp_record_stride(cfg.pmp_entries)) as usize;
                    self.pmp_slots[slot] = false;
                    p.pmp_record = None;
                }
            }
        }
        self.procs[proc as usize].iid_allocations.retain(|&x| x != h);
        self.m.prio[r.line as usize] = 1;
        self.update_tick_pub();
        Ok(())
    }

    pub fn int_prio(&mut self, proc: u32, h: Handle, prio: u8) -> Result<(), KernelError> {
        if prio == 0 {
            return Err(KernelError::InvalidArgument);
        }
        let r = self.reg_mut(proc, h)?;
        r.prio = prio;
        let line = r.line;
        self.m.prio[line as usize] = prio;
        Ok(())
    }

    pub fn int_ena(&mut self, proc: u32, h: Handle) -> Result<(), KernelError> {
        self.set_enabled(proc, h, true)
    }

    pub fn int_dis(&mut self, proc: u32, h: Handle) -> Result<(), KernelError> {
        self.set_enabled(proc, h, false)
    }

    fn set_enabled(&mut self, proc: u32, h: Handle, on: bool) -> Result<(), KernelError> {
        let r = self.reg_mut(proc, h)?;
        r.enabled = on;
        let (slot, line) = (r.cam_slot, r.line);
        if self.scheme.config().is_none() {
            return Ok(());
        }
        match slot {
            Some(i) => {
                let n = &mut self.m.state.csrs.cam.num[i];
                *n = if on { *n | IID_ENABLED } else { *n & !IID_ENABLED };
            }
            None => {
                let addr = table_record_addr(IID_BASE, line).expect("registered line");
                self.m.mem.poke(addr, on as u32).expect("IID table is mapped");
            }
        }
        Ok(())
    }

    /// Refill every budget whose period boundary has passed. A handler
    /// that is running right now gets the refill at its next write-back.
    pub fn replenish_tick(&mut self, now: u64) {
        for i in 0..self.regs.len() {
            let Some(r) = &mut self.regs[i] else { continue };
            if r.policy.period == 0 || now < r.next_replenish {
                continue;
            }
            while r.next_replenish <= now {
                r.next_replenish += r.policy.period;
            }
            let (ptr, cap) = (r.budget_ptr, r.policy.capacity);
            if self.scheme.config().is_some() {
                self.m.replenish(ptr, cap).expect("budget area is mapped");
            }
        }
    }
}
