use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_thirdgrade"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_config(dir: &Path, name: &str, value: Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(&value).unwrap()).unwrap();
    p
}

fn small(extra: Value) -> Value {
    let mut base = json!({
        "nu": 0.5, "alpha1": 1.0, "alpha2": -0.5, "beta": 0.5,
        "horizon": 0.02, "dt": 0.001,
        "basis": { "kmax": 3, "lmax": 3, "grid_n": null },
        "initial": { "family": "taylor_green_like", "amplitude": 1.0 },
        "seed": 5
    });
    for (k, v) in extra.as_object().unwrap() {
        base[k] = v.clone();
    }
    base
}

fn noisy() -> Value {
    small(json!({ "noise": { "kind": "additive", "channels": [
        { "type": "mode", "k": 1, "l": 1, "amplitude": 0.5 },
        { "type": "mode", "k": 1, "l": 2, "amplitude": 0.5 }
    ]}}))
}

fn column(csv_text: &str, name: &str) -> Vec<f64> {
    let mut rd = csv::Reader::from_reader(csv_text.as_bytes());
    let idx = rd.headers().unwrap().iter().position(|h| h == name).unwrap();
    rd.records().map(|r| r.unwrap()[idx].parse().unwrap()).collect()
}

#[test]
fn simulate_zero_noise_energy_non_increasing() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", small(json!({})));
    let out = dir.path().join("out");
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ledger = fs::read_to_string(out.join("ledger.csv")).unwrap();
    let e = column(&ledger, "weighted_energy");
    assert_eq!(e.len(), 21);
    assert!(e.windows(2).all(|w| w[1] <= w[0]));

    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["master_seed"], 5);
    assert_eq!(manifest["config"]["nu"], 0.5);
    assert!(manifest["build"].is_string());
    assert!(manifest["wall_time_s"].is_number());
}

#[test]
fn simulate_thermodynamic_violation_exits_2() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", small(json!({ "alpha2": 5.0, "beta": 0.01 })));
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("thermodynamic"));
}

#[test]
fn simulate_bad_inputs_exit_2() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.json");
    assert_eq!(code(&run(&["simulate", "--config", missing.to_str().unwrap()])), 2);
    let junk = dir.path().join("junk.json");
    fs::write(&junk, "{ not json").unwrap();
    assert_eq!(code(&run(&["simulate", "--config", junk.to_str().unwrap()])), 2);
    let unknown = write_config(dir.path(), "u.json", small(json!({ "viscosity": 1.0 })));
    assert_eq!(code(&run(&["simulate", "--config", unknown.to_str().unwrap()])), 2);
}

#[test]
fn simulate_blowup_exits_3_and_writes_files() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        json!({
            "nu": 0.1, "alpha1": 0.1, "alpha2": -0.1, "beta": 1e-4, "horizon": 1.0, "dt": 0.05,
            "initial": { "family": "random_band", "band": 4, "v_norm": 1e4 }, "seed": 1
        }),
    );
    let out = dir.path().join("out");
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let step = manifest["blowup_step"].as_u64().unwrap();
    let rows = column(&fs::read_to_string(out.join("ledger.csv")).unwrap(), "step");
    assert_eq!(rows.len() as u64, step);
}

#[test]
fn unsafe_noise_needs_flag() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        small(json!({ "noise": { "kind": "linear_unsafe", "channels": [{ "type": "constant", "value": 1.0 }] } })),
    );
    let out = dir.path().join("o");
    let args = ["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    assert_eq!(code(&run(&args)), 2);
    let mut with_flag = args.to_vec();
    with_flag.push("--allow-unsafe-noise");
    assert_eq!(code(&run(&with_flag)), 0);
}

#[test]
fn snapshots_written_when_requested() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", small(json!({ "snapshot_times": [0.0, 0.01] })));
    let out = dir.path().join("o");
    assert_eq!(code(&run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])), 0);
    let text = fs::read_to_string(out.join("snapshots.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "t,k,l,coeff");
    assert_eq!(text.lines().count(), 1 + 2 * 9);
}

#[test]
fn mc_single_path_matches_simulate() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", noisy());
    let (a, b) = (dir.path().join("sim"), dir.path().join("mc"));
    assert_eq!(code(&run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()])), 0);
    assert_eq!(
        code(&run(&["mc", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap(), "--paths", "1"])),
        0
    );
    let ledger = fs::read_to_string(a.join("ledger.csv")).unwrap();
    let paths = fs::read_to_string(b.join("paths.csv")).unwrap();
    let v = column(&ledger, "v_sq");
    let sup = v.iter().cloned().fold(f64::MIN, f64::max);
    assert_eq!(column(&paths, "sup_v_sq"), vec![sup]);
    assert_eq!(column(&paths, "int_d_sq"), vec![*column(&ledger, "int_d_sq").last().unwrap()]);
    assert_eq!(column(&paths, "int_a4_4"), vec![*column(&ledger, "int_a4_4").last().unwrap()]);
}

#[test]
fn mc_parallelism_invariant_outputs() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", noisy());
    let mut outs = Vec::new();
    for p in ["1", "4"] {
        let out = dir.path().join(format!("p{p}"));
        let o = run(&[
            "mc", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--paths", "8", "--parallel", p,
        ]);
        assert_eq!(code(&o), 0);
        outs.push(out);
    }
    for f in ["ensemble.json", "paths.csv"] {
        assert_eq!(fs::read(outs[0].join(f)).unwrap(), fs::read(outs[1].join(f)).unwrap(), "{f}");
    }
}

#[test]
fn mc_zero_paths_exit_2() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", noisy());
    assert_eq!(code(&run(&["mc", "--config", cfg.to_str().unwrap(), "--paths", "0"])), 2);
}

#[test]
fn converge_single_level_and_malformed() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", noisy());
    let out = dir.path().join("o");
    let o = run(&[
        "converge", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--levels", "9", "--paths", "2",
    ]);
    assert_eq!(code(&o), 0);
    let table = fs::read_to_string(out.join("converge.csv")).unwrap();
    assert_eq!(table.lines().count(), 1);

    for bad in ["4,x,16", "16,9", "5,9", ""] {
        let o = run(&["converge", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--levels", bad]);
        assert_eq!(code(&o), 2, "levels {bad:?}");
    }
    let o = run(&["converge", "--config", cfg.to_str().unwrap(), "--dts", "1e-3,4e-4"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn converge_levels_ratios_below_one() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", noisy());
    let out = dir.path().join("o");
    let o = run(&[
        "converge", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--levels", "4,9,16", "--paths",
        "4", "--parallel", "2",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(out.join("converge.csv")).unwrap();
    let sup = column(&table, "sup_dist");
    assert_eq!(sup.len(), 2);
    assert!(sup[1] < sup[0]);
}

#[test]
fn converge_dts_prints_order() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", noisy());
    let out = dir.path().join("o");
    let o = run(&[
        "converge", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--dts", "2e-3,1e-3,5e-4,2.5e-4",
        "--paths", "10", "--parallel", "2",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    let order: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("observed strong order = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(order >= 0.4, "order {order}");
}

#[test]
fn verify_defaults_pass() {
    let dir = TempDir::new().unwrap();
    let o = run(&["verify", "--trials", "100", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("verify.json")).unwrap()).unwrap();
    assert_eq!(report["all_pass"], true);
    assert_eq!(report["checks"].as_array().unwrap().len(), 17);
}

#[test]
fn verify_zero_trials_exit_2() {
    assert_eq!(code(&run(&["verify", "--trials", "0"])), 2);
    assert_eq!(code(&run(&["verify", "--spec", "4"])), 2);
    assert_eq!(code(&run(&["verify", "--spec", "4,4,10"])), 2);
}

#[test]
fn verify_broken_convention_exit_1() {
    let o = run(&["verify", "--trials", "20", "--spec", "3,3", "--debug-a-equals-d"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}
