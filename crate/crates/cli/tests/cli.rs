use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;
use unitary_interp::checkpoint::Checkpoint;
use unitary_interp::dataset::load_dataset;
use unitary_interp::linalg::{gate_fidelity, ComplexMatrix};
use unitary_interp::model::{init_parameters, Architecture};
use unitary_interp::pauli::HamiltonianSpec;
use unitary_interp::propagators::reference_propagator;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_unitary-interp"));
    c.env("RUST_LOG", "warn").env_remove("UNITARY_INTERP_WORKERS");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn hamiltonian(dir: &Path, qubits: &str, family: &str, seed: &str) -> PathBuf {
    let name = format!("h_{qubits}_{family}_{seed}.json");
    ok(dir, &["gen-hamiltonian", "--qubits", qubits, "--family", family, "--seed", seed, "--out", &name]);
    dir.join(name)
}

fn spec(path: &Path) -> HamiltonianSpec {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_hamiltonian_term_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = ok(d, &["gen-hamiltonian", "--qubits", "2", "--family", "general", "--seed", "7", "--out", "g.json"]);
    assert_eq!(out.trim(), "15 terms");
    assert_eq!(spec(&d.join("g.json")).terms.len(), 15);
    ok(d, &["gen-hamiltonian", "--qubits", "8", "--family", "ising", "--out", "i.json"]);
    assert_eq!(spec(&d.join("i.json")).terms.len(), 15);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&run(d, &["gen-hamiltonian", "--qubits", "0", "--out", "x.json"])), 2);
    assert_eq!(code(&run(d, &["gen-hamiltonian", "--qubits", "2", "--family", "heisenberg", "--out", "x.json"])), 2);
    assert_eq!(code(&run(d, &["train"])), 2);
    let h = hamiltonian(d, "2", "general", "1");
    assert_eq!(code(&run(d, &["propagate", "--ham", h.to_str().unwrap(), "--t", "-0.5"])), 2);
}

#[test]
fn io_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = run(d, &["gen-dataset", "--ham", "missing.json", "--out", "d.jsonl"]);
    assert_eq!(code(&out), 1);
    let out = run(d, &["gen-hamiltonian", "--qubits", "2", "--out", "no/such/dir/h.json"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn invalid_spec_file_is_a_contract_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("bad.json"), "{\"qubits\": 2}").unwrap();
    assert_eq!(code(&run(d, &["gen-dataset", "--ham", "bad.json", "--out", "d.jsonl"])), 3);
}

#[test]
fn gen_dataset_defaults_and_coarse_grid() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let h = hamiltonian(d, "2", "general", "3");
    let h = h.to_str().unwrap();
    ok(d, &["gen-dataset", "--ham", h, "--out", "full.jsonl"]);
    let text = fs::read_to_string(d.join("full.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 1 + 11000);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(d.join("full.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["format_version"], 1);
    assert_eq!(manifest["config"]["samples"], 11000);

    ok(d, &["gen-dataset", "--ham", h, "--dt", "1.0", "--samples", "300", "--out", "coarse.jsonl"]);
    let data = load_dataset(d.join("coarse.jsonl")).unwrap();
    assert!(data.samples.iter().all(|s| s.tau == 0.0 || s.tau == 1.0));
}

#[test]
fn gen_dataset_oracle_grade_steps() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let h = hamiltonian(d, "2", "general", "5");
    let hs = h.to_str().unwrap();
    ok(d, &["gen-dataset", "--ham", hs, "--steps", "5000", "--samples", "40", "--dt", "0.25", "--out", "m.jsonl"]);
    ok(d, &["gen-dataset", "--ham", hs, "--method", "trotter", "--steps", "5000", "--samples", "40", "--dt", "0.25", "--out", "t.jsonl"]);
    let spec = spec(&h);
    // Trotter with 5000 steps is the reference itself. Magnus-2 keeps its
    // third-order truncation error no matter how many steps it takes.
    for (file, tol) in [("m.jsonl", 1e-4), ("t.jsonl", 1e-12)] {
        for s in load_dataset(d.join(file)).unwrap().samples {
            let reference = reference_propagator(&spec, s.tau).unwrap();
            let f = gate_fidelity(s.u_tau.matrix(), reference.matrix()).unwrap();
            assert!(f >= 1.0 - tol, "{file} tau={}: {f}", s.tau);
        }
    }
}

fn small_dataset(d: &Path, family: &str) -> PathBuf {
    let h = hamiltonian(d, "2", family, "2");
    let name = format!("{family}.jsonl");
    ok(d, &["gen-dataset", "--ham", h.to_str().unwrap(), "--samples", "300", "--dt", "0.25", "--out", &name]);
    d.join(name)
}

#[test]
fn train_with_defaults_writes_full_history() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = small_dataset(d, "general");
    ok(d, &["train", "--dataset", data.to_str().unwrap(), "--out", "run"]);
    let csv = fs::read_to_string(d.join("run/loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 1000);
    let ckpt = Checkpoint::load(d.join("run/model.json")).unwrap();
    assert_eq!(ckpt.epoch, 1000);
    assert_eq!(ckpt.architecture, Architecture::Model2);
    let checkpoints = fs::read_dir(d.join("run/checkpoints")).unwrap().count();
    assert_eq!(checkpoints, 10);
    let last = Checkpoint::load(d.join("run/checkpoints/epoch_01000.json")).unwrap();
    assert_eq!(last, ckpt);
    assert!(d.join("run/manifest.json").exists());
}

#[test]
fn zero_epochs_writes_initial_checkpoint_only() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = small_dataset(d, "general");
    ok(d, &["train", "--dataset", data.to_str().unwrap(), "--epochs", "0", "--seed", "9", "--out", "run"]);
    let ckpt = Checkpoint::load(d.join("run/model.json")).unwrap();
    assert_eq!(ckpt.epoch, 0);
    assert_eq!(ckpt.parameters().unwrap(), init_parameters(Architecture::Model2, 9));
    assert!(!d.join("run/loss.csv").exists());
    assert_eq!(fs::read_dir(d.join("run/checkpoints")).unwrap().count(), 0);
}

#[test]
fn effective_strategy_on_general_family_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = small_dataset(d, "general");
    let out = run(d, &["train", "--dataset", data.to_str().unwrap(), "--strategy", "effective-trotter", "--out", "run"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("ising"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = small_dataset(d, "general");
    fs::write(d.join("cfg.json"), r#"{"epochs": 2, "batches_per_epoch": 3, "seed": 4}"#).unwrap();
    let data = data.to_str().unwrap();
    ok(d, &["train", "--dataset", data, "--config", "cfg.json", "--out", "a"]);
    ok(d, &["train", "--dataset", data, "--config", "cfg.json", "--epochs", "3", "--out", "b"]);
    assert_eq!(fs::read_to_string(d.join("a/loss.csv")).unwrap().lines().count(), 3);
    assert_eq!(fs::read_to_string(d.join("b/loss.csv")).unwrap().lines().count(), 4);
    assert_eq!(Checkpoint::load(d.join("b/model.json")).unwrap().seed, 4);
    fs::write(d.join("typo.json"), r#"{"epoch": 2}"#).unwrap();
    assert_eq!(code(&run(d, &["train", "--dataset", data, "--config", "typo.json", "--out", "c"])), 2);
}

#[test]
fn training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = small_dataset(d, "general");
    let data = data.to_str().unwrap();
    for out in ["x", "y"] {
        ok(d, &["train", "--dataset", data, "--epochs", "3", "--batches", "10", "--seed", "2", "--out", out]);
    }
    assert_eq!(fs::read(d.join("x/model.json")).unwrap(), fs::read(d.join("y/model.json")).unwrap());
    assert_eq!(fs::read(d.join("x/loss.csv")).unwrap(), fs::read(d.join("y/loss.csv")).unwrap());
}

#[test]
fn diverging_training_exits_4_with_dump() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = small_dataset(d, "general");
    let out = run(d, &["train", "--dataset", data.to_str().unwrap(), "--epochs", "5", "--lr", "1e300", "--out", "run"]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("run/diverged.json").exists());
}

#[test]
fn evaluate_writes_curve_and_checks_spec() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = small_dataset(d, "ising");
    let h = d.join("h_2_ising_2.json");
    ok(d, &[
        "train", "--dataset", data.to_str().unwrap(), "--strategy", "effective-magnus", "--epochs", "2", "--steps", "10",
        "--out", "run",
    ]);
    let hs = h.to_str().unwrap();
    ok(d, &["evaluate", "--model", "run/model.json", "--ham", hs, "--svd-correct", "--out", "curve.csv"]);
    let csv = fs::read_to_string(d.join("curve.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "t,f_raw,f_svd");
    assert_eq!(rows.len(), 101);
    for row in &rows[1..] {
        let cols: Vec<f64> = row.split(',').map(|c| c.parse().unwrap()).collect();
        // Effective reconstructions are unitary, so both columns agree.
        assert!((cols[1] - cols[2]).abs() < 1e-9);
        assert!(cols[1] <= 1.0 + 1e-9 && cols[1] >= 0.0);
    }
    assert!(d.join("curve.json").exists());

    let h3 = hamiltonian(d, "3", "ising", "1");
    let out = run(d, &["evaluate", "--model", "run/model.json", "--ham", h3.to_str().unwrap(), "--out", "c3.csv"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn stats_pinned_seed_has_zero_spread() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &[
        "stats", "--runs", "2", "--qubits", "2", "--dt", "0.5", "--samples", "100", "--epochs", "2", "--batches", "5",
        "--pin-seed", "11", "--out", "st",
    ]);
    let csv = fs::read_to_string(d.join("st/summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 101);
    for row in csv.lines().skip(1) {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[2].parse::<f64>().unwrap(), 0.0);
        assert_eq!(cols[3], "2");
    }
}

#[test]
fn stats_ten_runs_summary_has_100_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = bin()
        .current_dir(d)
        .env("UNITARY_INTERP_WORKERS", "2")
        .args([
            "stats", "--runs", "10", "--qubits", "2", "--dt", "0.1", "--samples", "200", "--epochs", "2", "--batches",
            "5", "--out", "st",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(d.join("st/summary.csv")).unwrap().lines().count(), 101);
    assert_eq!(fs::read_dir(d.join("st/runs")).unwrap().count(), 10);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(d.join("st/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["completed_runs"].as_array().unwrap().len(), 10);
    assert_eq!(manifest["finished"], true);
    // Mean recomputed from the per-run files.
    let summary: Value = serde_json::from_str(&fs::read_to_string(d.join("st/summary.json")).unwrap()).unwrap();
    let mut sum = vec![0.0; 100];
    for k in 0..10 {
        let csv = fs::read_to_string(d.join(format!("st/runs/run_{k:04}.csv"))).unwrap();
        for (j, row) in csv.lines().skip(1).enumerate() {
            sum[j] += row.split(',').nth(2).unwrap().parse::<f64>().unwrap();
        }
    }
    for j in 0..100 {
        let mu = summary["f_mu"][j].as_f64().unwrap();
        assert!((mu - sum[j] / 10.0).abs() <= 1e-12);
    }
}

#[test]
fn interrupted_stats_lists_completed_runs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut child = bin()
        .current_dir(d)
        .args(["stats", "--runs", "50", "--samples", "200", "--epochs", "20", "--batches", "20", "--out", "st"])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let manifest = d.join("st/manifest.json");
    let deadline = Instant::now() + Duration::from_secs(120);
    let completed = loop {
        if let Ok(text) = fs::read_to_string(&manifest) {
            if let Ok(v) = serde_json::from_str::<Value>(&text) {
                let done = v["completed_runs"].as_array().map_or(0, |a| a.len());
                if done >= 1 {
                    break v;
                }
            }
        }
        assert!(Instant::now() < deadline, "no run completed in time");
        std::thread::sleep(Duration::from_millis(50));
    };
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(completed["finished"], false);
    for k in completed["completed_runs"].as_array().unwrap() {
        let k = k.as_u64().unwrap();
        assert!(d.join(format!("st/runs/run_{k:04}.csv")).exists());
    }
    let final_manifest: Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(final_manifest["finished"], false);
}

fn propagate(d: &Path, h: &str, t: &str, method: &str, steps: &str) -> (ComplexMatrix, f64) {
    let out = ok(d, &["propagate", "--ham", h, "--t", t, "--method", method, "--steps", steps]);
    let v: Value = serde_json::from_str(&out).unwrap();
    let u: ComplexMatrix = serde_json::from_value(v["unitary"].clone()).unwrap();
    (u, v["unitarity_defect"].as_f64().unwrap())
}

#[test]
fn propagate_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let h = hamiltonian(d, "2", "general", "6");
    let h = h.to_str().unwrap();
    let (u0, defect0) = propagate(d, h, "0", "magnus2", "50");
    assert!(u0.max_abs_diff(&ComplexMatrix::identity(4)) <= 1e-12 && defect0 <= 1e-12);
    let (m, dm) = propagate(d, h, "0.8", "magnus2", "5000");
    let (t, dt) = propagate(d, h, "0.8", "trotter", "5000");
    assert!(gate_fidelity(&m, &t).unwrap() >= 1.0 - 1e-5);
    assert!(dm <= 1e-8 && dt <= 1e-8);
    for time in ["0.3", "1.0", "2.5"] {
        for method in ["magnus2", "trotter"] {
            assert!(propagate(d, h, time, method, "50").1 <= 1e-8);
        }
    }
}
