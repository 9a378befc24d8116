use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use pathrecon::cli::{parse_scenario, render_scenario};
use pathrecon::engine::{run_simulation, ScenarioConfig, Strategy, Summary};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_iiot-sim"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn write_short(dir: &Path, tweak: impl Fn(&mut ScenarioConfig)) -> PathBuf {
    let text = fs::read_to_string(scenario("forced-death.toml")).unwrap();
    let mut cfg = parse_scenario(&text).unwrap();
    cfg.timing.horizon_cycles = 4000;
    cfg.run.forced_deaths[0].cycle = 1500;
    tweak(&mut cfg);
    let path = dir.join("short.toml");
    fs::write(&path, render_scenario(&cfg)).unwrap();
    path
}

#[test]
fn binary_and_library_produce_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_short(dir.path(), |_| {});
    let out = dir.path().join("out");
    let status = bin()
        .arg(&path)
        .args(["--strategy", "pdd-cr,distr", "--seeds", "2,5", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());

    let base = parse_scenario(&fs::read_to_string(&path).unwrap()).unwrap();
    for s in [Strategy::PddCr, Strategy::Distr] {
        for seed in [2, 5] {
            let mut cfg = base.clone();
            cfg.run.strategy = s;
            cfg.run.seed = seed;
            let lib = run_simulation(&cfg).unwrap();
            let stem = format!("{s}-seed{seed}");
            let csv = fs::read_to_string(out.join(format!("{stem}.csv"))).unwrap();
            assert_eq!(csv, lib.csv_string(), "{stem}");
            let json = fs::read_to_string(out.join(format!("{stem}.summary.json"))).unwrap();
            let summary: Summary = serde_json::from_str(&json).unwrap();
            assert_eq!(summary, lib.summary, "{stem}");
        }
    }
    let table = fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn validate_only_accepts_shipped_scenarios() {
    for name in ["default.toml", "fig6.toml", "forced-death.toml", "sweep.toml"] {
        let o = bin().arg(scenario(name)).arg("--validate-only").output().unwrap();
        assert_eq!(o.status.code(), Some(0), "{name}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn validation_failures_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_short(dir.path(), |c| c.timing.gamma = 1.5);
    let o = bin().arg(&path).arg("--validate-only").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("timing.gamma"));

    let typo = dir.path().join("typo.toml");
    let text = fs::read_to_string(scenario("default.toml")).unwrap();
    fs::write(&typo, text.replace("ttl = 2", "tll = 2")).unwrap();
    let o = bin().arg(&typo).args(["--out"]).arg(dir.path().join("o")).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("tll") && err.contains("line"), "{err}");

    let o = bin().arg(&path).args(["--strategy", "nope"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn runtime_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_short(dir.path(), |_| {});
    let blocker = dir.path().join("blocker");
    fs::write(&blocker, "").unwrap();
    let o = bin().arg(&path).arg("--out").arg(blocker.join("out")).output().unwrap();
    assert_eq!(o.status.code(), Some(2));

    let o = bin().arg(dir.path().join("missing.toml")).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_and_trace_flags_reach_the_output() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_short(dir.path(), |c| c.timing.horizon_cycles = 600);
    let out = dir.path().join("out");
    let o = bin()
        .arg(&path)
        .args(["--strategy", "distr", "--event-rates", "0.01,0.1", "--trace", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("rate0.1-distr-seed1.trace").exists());
    let table = fs::read_to_string(out.join("comparison.csv")).unwrap();
    let rates: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(rates, ["0.01", "0.1"]);
}
