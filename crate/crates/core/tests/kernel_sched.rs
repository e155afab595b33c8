use uisim::engine::{MachineEvent, Variant};
use uisim::engine::machine::ForcedCause;
use uisim::harness::devices::{Devices, TIMER_IRQ};
use uisim::harness::rig::{Rig, BG_DATA, TARGET_DATA};
use uisim::harness::workloads::{ATTACKER, CHURN, FRAMES, VICTIM};
use uisim::kernel::{BudgetPolicy, KernelCosts, Scheme};

#[test]
fn quantum_alternates_compute_threads() {
    for scheme in ["v5", "kernel", "intel", "software"] {
        let mut rig = Rig::new(Scheme::parse(scheme).unwrap(), KernelCosts::default(), Devices::new(0, 0, 0), FRAMES, 0, FRAMES, &[]).unwrap();
        rig.spawn_target();
        rig.spawn_background();
        rig.sys.start();
        rig.sys.run_until(3_000_000).unwrap();
        let (a, b) = (rig.peek(TARGET_DATA.start), rig.peek(BG_DATA.start));
        assert!(a >= 3 && b >= 3, "{scheme}: frames {a} / {b}");
        assert!(a.abs_diff(b) <= 1, "{scheme}: frames {a} / {b}");
        assert!(rig.sys.switches >= 250, "{scheme}: {} switches", rig.sys.switches);
    }
}

#[test]
fn yielding_threads_both_progress() {
    let mut rig = Rig::new(Scheme::variant(Variant::V2), KernelCosts::default(), Devices::new(0, 0, 0), CHURN, 0, CHURN, &[]).unwrap();
    rig.poke(TARGET_DATA.start + 16, 0x1234_5678);
    rig.poke(BG_DATA.start + 16, 0x9abc_def1);
    rig.spawn_target();
    rig.spawn_background();
    rig.sys.start();
    rig.sys.run_until(1_000_000).unwrap();
    let (a, b) = (rig.peek(TARGET_DATA.start), rig.peek(BG_DATA.start));
    assert!(a > 100 && b > 100, "bursts {a} / {b}");
}

#[test]
fn single_thread_runs_without_ticks() {
    let mut rig = Rig::new(Scheme::Kernel, KernelCosts::default(), Devices::new(0, 0, 0), FRAMES, 0, FRAMES, &[]).unwrap();
    rig.spawn_target();
    rig.sys.start();
    rig.sys.run_until(2_000_000).unwrap();
    assert_eq!(rig.sys.ticks, 0);
    assert_eq!(rig.peek(TARGET_DATA.start), 5);
}

#[test]
fn replenish_during_a_handler_lands_at_write_back() {
    let mut rig = Rig::new(
        Scheme::variant(Variant::V5),
        KernelCosts::default(),
        Devices::new(1000, 0, 0),
        ATTACKER,
        1 << TIMER_IRQ,
        VICTIM,
        &[("VICTIM_ADDR", BG_DATA.start)],
    )
    .unwrap();
    let h = rig.sys.int_reg(rig.target, TIMER_IRQ, rig.target_sym("temporal"), BudgetPolicy::new(2000, 0)).unwrap();
    rig.sys.int_ena(rig.target, h).unwrap();
    rig.spawn_background();
    rig.sys.start();
    let now = rig.cycle();
    rig.devices_mut().timer.start(now);
    let ptr = rig.sys.budget_ptr(h).unwrap();

    let mut replenished = false;
    for _ in 0..1_000_000 {
        let ev = rig.sys.step().unwrap();
        if !replenished && rig.sys.m.active_handler().is_some() && rig.sys.m.stats.instructions > 500 {
            rig.sys.m.replenish(ptr, 777).unwrap();
            assert_eq!(rig.peek(ptr), 2000, "the running handler owns the entry");
            replenished = true;
        }
        if let MachineEvent::UintrReturned { forced, ran, .. } = ev {
            assert!(replenished);
            // the handler still stops on the budget it entered with
            assert_eq!(forced, Some(ForcedCause::Temporal));
            assert_eq!(ran, 2000);
            assert_eq!(rig.peek(ptr), 777);
            return;
        }
    }
    panic!("handler never returned");
}
