use proptest::prelude::*;

use uisim::engine::iid::{table_record_addr, IidEntry, IID_ENABLED, IID_VALID};
use uisim::engine::{Variant, VariantConfig};
use uisim::harness::devices::Devices;
use uisim::kernel::layout::{IID_BASE, USER_SRAM};
use uisim::kernel::{BudgetPolicy, Handle, KernelCosts, KernelError, Scheme, System};
use uisim::memory::FLASH_BASE;

const ALL_LINES: u32 = (1 << 31) - 1;

fn code(p: u32) -> std::ops::Range<u32> {
    let base = FLASH_BASE + 0x1000 * (p + 1);
    base..base + 0x1000
}

fn data(p: u32) -> std::ops::Range<u32> {
    let base = USER_SRAM + 0x1000 * p;
    base..base + 0x1000
}

fn boot(v: Variant, procs: u32) -> System {
    let scheme = Scheme::Extension(VariantConfig::preset(v));
    let mut s = System::boot(scheme, KernelCosts::default(), Some(Box::new(Devices::new(0, 0, 0))), true).unwrap();
    for p in 0..procs {
        s.create_process(code(p), data(p), false, ALL_LINES);
    }
    s
}

fn entry(proc: u32) -> u32 {
    code(proc - 1).start + 0x40
}

#[test]
fn seventeenth_cam_registration_fails() {
    let mut s = boot(Variant::V5, 1);
    for line in 0..16 {
        s.int_reg(1, line, entry(1), BudgetPolicy::unlimited()).unwrap();
    }
    assert_eq!(s.iid_capacity(), 16);
    assert_eq!(s.int_reg(1, 16, entry(1), BudgetPolicy::unlimited()), Err(KernelError::NoFreeEntry));
    assert_eq!(s.live_allocations(), 16);
}

#[test]
fn freed_cam_slot_is_reused() {
    let mut s = boot(Variant::V5, 1);
    let hs: Vec<Handle> = (0..16).map(|l| s.int_reg(1, l, entry(1), BudgetPolicy::unlimited()).unwrap()).collect();
    s.int_del(1, hs[3]).unwrap();
    let h = s.int_reg(1, 20, entry(1), BudgetPolicy::unlimited()).unwrap();
    assert_eq!(h, hs[3]);
    assert_eq!(s.m.state.csrs.cam.num[3] & 0xffff, 20);
}

#[test]
fn argument_errors() {
    let mut s = boot(Variant::V1, 2);
    let h = s.int_reg(1, 3, entry(1), BudgetPolicy::unlimited()).unwrap();
    assert_eq!(s.int_reg(1, 3, entry(1), BudgetPolicy::unlimited()), Err(KernelError::Duplicate));
    assert_eq!(s.int_reg(1, 31, entry(1), BudgetPolicy::unlimited()), Err(KernelError::PermissionDenied));
    assert_eq!(s.int_reg(1, 4, entry(2), BudgetPolicy::unlimited()), Err(KernelError::PermissionDenied));
    assert_eq!(s.int_reg(1, 4, entry(1) + 2, BudgetPolicy::unlimited()), Err(KernelError::PermissionDenied));
    assert_eq!(s.int_reg(1, 4, entry(1), BudgetPolicy::new(200, 100)), Err(KernelError::InvalidPolicy));
    assert_eq!(s.int_ena(2, h), Err(KernelError::ForeignHandle));
    assert_eq!(s.int_prio(1, h, 0), Err(KernelError::InvalidArgument));
    s.int_del(1, h).unwrap();
    assert_eq!(s.int_ena(1, h), Err(KernelError::InvalidHandle));

    let mut capped = boot(Variant::V1, 0);
    let p = capped.create_process(code(0), data(0), false, 1 << 5);
    assert_eq!(capped.int_reg(p, 4, entry(1), BudgetPolicy::unlimited()), Err(KernelError::PermissionDenied));
    assert!(capped.int_reg(p, 5, entry(1), BudgetPolicy::unlimited()).is_ok());
}

#[test]
fn error_codes_are_negative_and_distinct() {
    let errs = [
        KernelError::NoFreeEntry,
        KernelError::PermissionDenied,
        KernelError::Duplicate,
        KernelError::InvalidHandle,
        KernelError::ForeignHandle,
        KernelError::InvalidPolicy,
        KernelError::InvalidArgument,
    ];
    let mut codes: Vec<i32> = errs.iter().map(|e| e.code()).collect();
    assert!(codes.iter().all(|&c| c < 0));
    codes.sort_unstable();
    codes.dedup();
    assert_eq!(codes.len(), errs.len());
}

#[test]
fn handlers_of_one_process_share_a_pmp_record() {
    let mut s = boot(Variant::V2, 2);
    let a = s.int_reg(1, 1, entry(1), BudgetPolicy::unlimited()).unwrap();
    let b = s.int_reg(1, 2, entry(1), BudgetPolicy::unlimited()).unwrap();
    let c = s.int_reg(2, 3, entry(2), BudgetPolicy::unlimited()).unwrap();
    assert_eq!(s.pmp_ptr(a), s.pmp_ptr(b));
    assert_ne!(s.pmp_ptr(a), s.pmp_ptr(c));
    assert_ne!(s.budget_ptr(a), s.budget_ptr(b));
    let shared = s.pmp_ptr(a);
    s.int_del(1, a).unwrap();
    s.int_del(1, b).unwrap();
    // the freed record is handed to the next process that needs one
    let mut s2 = s;
    let p3 = s2.create_process(code(2), data(2), false, ALL_LINES);
    let d = s2.int_reg(p3, 4, code(2).start, BudgetPolicy::unlimited()).unwrap();
    assert_eq!(s2.pmp_ptr(d), shared);
    assert_eq!(s2.handler_pmp(d).unwrap(), s2.procs[p3 as usize].pmp_set);
}

#[test]
fn enable_and_disable_toggle_the_iid_entry() {
    let mut cam = boot(Variant::V5, 1);
    let h = cam.int_reg(1, 7, entry(1), BudgetPolicy::unlimited()).unwrap();
    let n = cam.m.state.csrs.cam.num[0];
    assert_eq!(n & (IID_VALID | IID_ENABLED), IID_VALID);
    cam.int_ena(1, h).unwrap();
    assert_ne!(cam.m.state.csrs.cam.num[0] & IID_ENABLED, 0);
    cam.int_dis(1, h).unwrap();
    assert_eq!(cam.m.state.csrs.cam.num[0] & IID_ENABLED, 0);

    let mut table = boot(Variant::V1, 1);
    let h = table.int_reg(1, 7, entry(1), BudgetPolicy::unlimited()).unwrap();
    let addr = table_record_addr(IID_BASE, 7).unwrap();
    let read = |s: &System| IidEntry::decode(&s.m.mem.read_words(addr, 4).unwrap());
    assert!(!read(&table).enabled);
    table.int_ena(1, h).unwrap();
    let e = read(&table);
    assert!(e.enabled);
    assert_eq!(e.int_num, 7);
    table.int_del(1, h).unwrap();
    assert_eq!(table.m.mem.read_words(addr, 4).unwrap(), vec![0; 4]);
}

#[test]
fn priority_is_programmed_per_line() {
    let mut s = boot(Variant::V5, 1);
    let h = s.int_reg(1, 9, entry(1), BudgetPolicy::unlimited()).unwrap();
    s.int_prio(1, h, 5).unwrap();
    assert_eq!(s.m.prio[9], 5);
    s.int_del(1, h).unwrap();
    assert_eq!(s.m.prio[9], 1);
}

#[derive(Debug, Clone)]
enum Op {
    Reg { proc: u32, line: u32, cap: u32 },
    Del(usize),
    Ena(usize),
    Dis(usize),
    Prio(usize, u8),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => (1u32..4, 0u32..24, 0u32..2000).prop_map(|(proc, line, cap)| Op::Reg { proc, line, cap }),
        1 => (0usize..32).prop_map(Op::Del),
        1 => (0usize..32).prop_map(Op::Ena),
        1 => (0usize..32).prop_map(Op::Dis),
        1 => (0usize..32, 0u8..8).prop_map(|(i, p)| Op::Prio(i, p)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn syscalls_never_widen_a_handler_domain(v in 0usize..5, ops in prop::collection::vec(op(), 1..60)) {
        let mut s = boot(Variant::ALL[v], 3);
        let mut live: Vec<(u32, Handle)> = Vec::new();
        for o in ops {
            // callers may also pass handles they do not own
            let pick = |i: usize, live: &[(u32, Handle)]| live.get(i % live.len().max(1)).copied();
            match o {
                Op::Reg { proc, line, cap } => {
                    let policy = BudgetPolicy::new(cap, if cap % 2 == 0 { 0 } else { 4000 });
                    let e = entry(proc);
                    if let Ok(h) = s.int_reg(proc, line, e, policy) {
                        live.push((proc, h));
                    }
                }
                Op::Del(i) => {
                    if let Some((p, h)) = pick(i, &live) {
                        let caller = if i % 5 == 0 { p % 3 + 1 } else { p };
                        let res = s.int_del(caller, h);
                        prop_assert_eq!(res.is_ok(), caller == p);
                        if res.is_ok() {
                            live.retain(|&(_, x)| x != h);
                            prop_assert_eq!(s.int_ena(p, h), Err(KernelError::InvalidHandle));
                        }
                    }
                }
                Op::Ena(i) => if let Some((p, h)) = pick(i, &live) { s.int_ena(p, h).unwrap(); },
                Op::Dis(i) => if let Some((p, h)) = pick(i, &live) { s.int_dis(p, h).unwrap(); },
                Op::Prio(i, pr) => if let Some((p, h)) = pick(i, &live) {
                    prop_assert_eq!(s.int_prio(p, h, pr).is_ok(), pr > 0);
                },
            }
            prop_assert_eq!(s.live_allocations(), live.len());
            prop_assert!(live.len() <= s.iid_capacity());
            for &(p, h) in &live {
                let installed = s.handler_pmp(h).unwrap();
                let domain = &s.procs[p as usize].pmp_set;
                prop_assert!(installed.is_subset_of(domain));
                prop_assert_eq!(&installed, domain);
            }
        }
    }
}
