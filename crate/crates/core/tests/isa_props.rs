use proptest::prelude::*;

use uisim::isa::asm::assemble_at;
use uisim::isa::csr::CsrFile;
use uisim::isa::{decode, encode, step, CoreTiming, Instruction, MachineState, StepEvent};
use uisim::memory::{BusTiming, MemoryMap, MemorySystem, FLASH_BASE, SRAM_BASE};
use uisim::protection::PmpUnit;

// Hand-encoded from the RV32IM field layouts.
const FROZEN: [(&str, u32); 16] = [
    ("addi x0, x0, 0", 0x0000_0013),
    ("add x1, x2, x3", 0x0031_00b3),
    ("lui x5, 0x12345", 0x1234_52b7),
    ("jal x1, 8", 0x0080_00ef),
    ("beq x1, x2, -4", 0xfe20_8ee3),
    ("lw x10, 8(x2)", 0x0081_2503),
    ("sw x10, 12(x2)", 0x00a1_2623),
    ("mul x3, x4, x5", 0x0252_01b3),
    ("divu x6, x7, x8", 0x0283_d333),
    ("srai x1, x2, 3", 0x4031_5093),
    ("csrrw x5, 0x340, x6", 0x3403_12f3),
    ("ecall", 0x0000_0073),
    ("ebreak", 0x0010_0073),
    ("uret", 0x0020_0073),
    ("mret", 0x3020_0073),
    ("wfi", 0x1050_0073),
];

#[test]
fn frozen_encodings() {
    for (src, word) in FROZEN {
        let img = assemble_at(src, 0).unwrap();
        assert_eq!(img.words, vec![word], "{src}");
        assert!(!matches!(decode(word), Instruction::Illegal(_)), "{src}");
        assert_eq!(encode(&decode(word)), word, "{src}");
    }
}

fn machine(word: u32) -> (MachineState, MemorySystem, PmpUnit) {
    let mut mem = MemorySystem::new(MemoryMap::standard(false, false), BusTiming::default());
    mem.poke(FLASH_BASE, word).unwrap();
    let mut st = MachineState::new(CsrFile::baseline(), FLASH_BASE);
    for r in 1..32 {
        st.set_reg(r, SRAM_BASE + 0x100 + 4 * r as u32);
    }
    (st, mem, PmpUnit::new(4))
}

const OPCODES: [u32; 10] = [0x37, 0x17, 0x6f, 0x67, 0x63, 0x03, 0x23, 0x13, 0x33, 0x73];

/// Words with a valid major opcode, so most decode to something.
fn word() -> impl Strategy<Value = u32> {
    (any::<u32>(), prop::sample::select(&OPCODES[..])).prop_map(|(w, op)| (w & !0x7f) | op)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn decode_is_stable_under_reencoding(w in word()) {
        let inst = decode(w);
        if !matches!(inst, Instruction::Illegal(_)) {
            prop_assert_eq!(decode(encode(&inst)), inst);
        } else {
            prop_assert_eq!(encode(&inst), w);
        }
    }

    #[test]
    fn disassembly_reassembles(w in word()) {
        let inst = decode(w);
        if !matches!(inst, Instruction::Illegal(_) | Instruction::Fence) {
            let img = assemble_at(&inst.to_string(), 0).unwrap();
            prop_assert_eq!(img.words, vec![encode(&inst)]);
        }
    }

    #[test]
    fn x0_stays_zero(w in word()) {
        // force rd = x0
        let w = w & !(0x1f << 7);
        let (mut st, mut mem, pmp) = machine(w);
        let rep = step(&mut st, &mut mem, &pmp, &CoreTiming::default(), None);
        prop_assert_eq!(st.reg(0), 0);
        if rep.event == StepEvent::Retired {
            prop_assert!(rep.cycles >= 1);
        }
    }
}
