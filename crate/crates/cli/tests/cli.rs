use std::path::Path;
use std::process::{Command, Output};

use uisim::harness::sweep::{from_csv, LatencyRow, ModbusRow, PtoRow};

fn uisim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uisim")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn verify_latency_passes_with_default_calibration() {
    let o = uisim(&["verify-latency"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let s = stdout(&o);
    for (name, v) in [("base", 5), ("v1", 38), ("v2", 29), ("v3", 17), ("v4", 14), ("v5", 11), ("v1-spill", 44)] {
        assert!(s.lines().any(|l| l.split_whitespace().collect::<Vec<_>>() == [name, &v.to_string(), &v.to_string(), "ok"]), "{s}");
    }
}

#[test]
fn perturbed_calibration_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    for field in ["ack", "finish", "redirect", "spill_setup"] {
        let cfg = dir.path().join(format!("{field}.toml"));
        let base = match field {
            "ack" | "finish" => 1,
            "redirect" => 4,
            _ => 3,
        };
        std::fs::write(&cfg, format!("[calibration]\n{field} = {}\n", base + 1)).unwrap();
        let o = uisim(&["verify-latency", "--config", path(&cfg)]);
        assert_eq!(code(&o), 3, "{field}: {}", stdout(&o));
        assert!(stderr(&o).contains("latency mismatch"), "{}", stderr(&o));
    }
}

#[test]
fn usage_and_config_errors() {
    assert_eq!(code(&uisim(&["run", "latency", "--scheme", "posix"])), 1);
    assert_eq!(code(&uisim(&["frobnicate"])), 1);
    assert_eq!(code(&uisim(&["--help"])), 0);

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 1\nsamples = 3\n").unwrap();
    let o = uisim(&["verify-latency", "--config", path(&cfg)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));

    std::fs::write(&cfg, "[experiment]\nschemes = [\"posix\"]\n").unwrap();
    let o = uisim(&["run", "sweep", "--config", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("posix"));
}

#[test]
fn latency_run_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = uisim(&["run", "latency", "--variant", "v5", "--state", "inactive", "--samples", "300", "--out", path(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("latency.csv")).unwrap();
    let rows: Vec<LatencyRow> = from_csv(&text).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].scheme, "v5");
    assert_eq!(rows[0].n, 300);
    assert!(rows[0].max < 20);
}

#[test]
fn isolation_on_v2_passes_all_six() {
    let dir = tempfile::tempdir().unwrap();
    let o = uisim(&["run", "isolate", "--variant", "v2", "--out", path(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("6/6 passed"));
    let csv = std::fs::read_to_string(dir.path().join("isolation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert!(uisim(&["run", "isolate", "--scheme", "kernel"]).status.code() == Some(1));
}

#[test]
fn outputs_are_identical_across_runs_and_worker_counts() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = |d: &Path, jobs: &'static str| {
        vec![
            "run".to_string(), "pto".into(), "--variant".into(), "v2".into(), "--mix".into(), "mixed".into(),
            "--freq".into(), "50000".into(), "--freq".into(), "16000".into(), "--seed".into(), "7".into(),
            "--jobs".into(), jobs.into(), "--out".into(), path(d).into(),
        ]
    };
    let run = |v: Vec<String>| uisim(&v.iter().map(String::as_str).collect::<Vec<_>>());
    let (oa, ob) = (run(args(a.path(), "1")), run(args(b.path(), "3")));
    assert_eq!(code(&oa), 0, "{}", stderr(&oa));
    assert_eq!(stdout(&oa), stdout(&ob));
    let fa = std::fs::read(a.path().join("pto.csv")).unwrap();
    assert_eq!(fa, std::fs::read(b.path().join("pto.csv")).unwrap());
    let rows: Vec<PtoRow> = from_csv(std::str::from_utf8(&fa).unwrap()).unwrap();
    assert_eq!(rows.iter().map(|r| r.freq_hz).collect::<Vec<_>>(), [16_000, 50_000]);
}

#[test]
fn sweep_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.toml");
    std::fs::write(
        &cfg,
        r#"
seed = 3
[experiment]
schemes = ["v5", "kernel"]
states = ["active"]
samples = 50
mixes = ["active"]
freqs = [10000]
bauds = [0, 115200]
window = 5000000
"#,
    )
    .unwrap();
    let o = uisim(&["run", "sweep", "--config", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let read = |n: &str| std::fs::read_to_string(dir.path().join(n)).unwrap();
    let lat: Vec<LatencyRow> = from_csv(&read("latency.csv")).unwrap();
    let pto: Vec<PtoRow> = from_csv(&read("pto.csv")).unwrap();
    let mb: Vec<ModbusRow> = from_csv(&read("modbus.csv")).unwrap();
    assert_eq!((lat.len(), pto.len(), mb.len()), (2, 2, 4));
    assert_eq!(lat[0].scheme, "kernel");
    assert!(lat[0].avg > 800.0 && lat[1].avg < 20.0);
}

#[test]
fn trace_segment_order() {
    let dir = tempfile::tempdir().unwrap();
    let seg = |v: &str| {
        let o = uisim(&["trace", "--variant", v, "--out", path(dir.path())]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let csv = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
        assert!(csv.starts_with("cycle,unit,action,port,detail\n"));
        let entry: Vec<(String, String, u64, u64)> = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(String::from).collect::<Vec<_>>())
            .filter(|f| f[4].starts_with("entry"))
            .map(|f| {
                let end = f[4].split_whitespace().nth(1).unwrap().trim_start_matches("end=").parse().unwrap();
                (f[2].clone(), f[3].clone(), f[0].parse().unwrap(), end)
            })
            .collect();
        (entry, stdout(&o))
    };
    let find = |e: &[(String, String, u64, u64)], a: &str| e.iter().find(|s| s.0 == a).cloned();

    let (v1, gantt) = seg("v1");
    assert!(gantt.contains("total 38"));
    let (pmp, bud, ctx) = (find(&v1, "pmp_load").unwrap(), find(&v1, "budget_load").unwrap(), find(&v1, "ctx_save").unwrap());
    // all on main SRAM, one after another
    assert!([&pmp.1, &bud.1, &ctx.1].iter().all(|p| *p == "sram"));
    assert!(ctx.3 <= pmp.2 && pmp.3 <= bud.2);

    let (v2, _) = seg("v2");
    let ctx = find(&v2, "ctx_save").unwrap();
    assert_eq!(ctx.1, "tcm_stack");
    let pmp = find(&v2, "pmp_load").unwrap();
    assert!(ctx.2 < pmp.3 && pmp.2 < ctx.3, "stacking overlaps the PMP load");

    let (v5, gantt) = seg("v5");
    assert!(find(&v5, "iid_lookup").is_none());
    assert!(gantt.contains("total 11"));
}
