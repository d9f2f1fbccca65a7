use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn kpzlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kpzlab")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = kpzlab(args);
    assert!(out.status.success(), "kpzlab {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn write_cfg(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_vec_pretty(v).unwrap()).unwrap();
    p
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut rd = csv::Reader::from_path(path).unwrap();
    rd.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect()
}

fn simulate_cfg(period: f64, amplitude: f64, steps: usize) -> Value {
    json!({
        "schema_version": 1,
        "master_seed": 3,
        "forcing": { "period": period, "synthesis": { "mode": "fourier", "n_modes": 8 }, "amplitude": amplitude },
        "grid_n": 128,
        "steps": steps,
        "snapshot_every": 4
    })
}

#[test]
fn zero_forcing_keeps_flat_data_flat() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "sim.json", &simulate_cfg(64.0, 0.0, 8));
    let out = tmp.path().join("run");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    for t in ["0", "4", "8"] {
        let rows = csv_rows(&out.join(format!("snapshots/phi_{t}.csv")));
        assert_eq!(rows.len(), 128);
        assert!(rows.iter().all(|r| r[1].parse::<f64>().unwrap() == 0.0), "snapshot {t}");
    }
}

#[test]
fn small_period_warns_in_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    // 8 T^(2/3) = 32 at T = 8
    let cfg = write_cfg(tmp.path(), "sim.json", &simulate_cfg(16.0, 1.0, 8));
    let out = tmp.path().join("run");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    let w = manifest(&out)["warnings"].as_array().unwrap().clone();
    assert!(w.iter().any(|w| w.as_str().unwrap().contains("8 T^(2/3)")), "{w:?}");

    let cfg = write_cfg(tmp.path(), "sim2.json", &simulate_cfg(64.0, 1.0, 8));
    let out = tmp.path().join("run2");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert!(manifest(&out)["warnings"].as_array().unwrap().is_empty());
}

#[test]
fn same_config_gives_identical_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = simulate_cfg(64.0, 1.0, 12);
    v["shocks"] = json!({ "jump_threshold": 2, "merge_radius_cells": 0.25 });
    let cfg = write_cfg(tmp.path(), "sim.json", &v);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["simulate", "--config", s(&cfg), "--out", s(&a), "--workers", "1"]);
    ok(&["simulate", "--config", s(&cfg), "--out", s(&b), "--workers", "3"]);
    assert_eq!(manifest(&a)["outputs"], manifest(&b)["outputs"]);
    // the seed override changes the data
    let c = tmp.path().join("c");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&c), "--seed", "4"]);
    assert_eq!(manifest(&c)["master_seed"], 4);
    assert_ne!(manifest(&a)["outputs"], manifest(&c)["outputs"]);
}

#[test]
fn schema_violations_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = simulate_cfg(64.0, 1.0, 4);
    v["grid_size"] = json!(64);
    let cfg = write_cfg(tmp.path(), "bad.json", &v);
    let out = kpzlab(&["simulate", "--config", s(&cfg), "--out", s(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid_size"));

    let mut v = simulate_cfg(64.0, 1.0, 4);
    v["schema_version"] = json!(9);
    let cfg = write_cfg(tmp.path(), "old.json", &v);
    let out = kpzlab(&["simulate", "--config", s(&cfg), "--out", s(&tmp.path().join("r2"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema_version"));
}

#[test]
fn too_few_replicas_exit_with_4() {
    let tmp = tempfile::tempdir().unwrap();
    let v = json!({ "schema_version": 1, "master_seed": 1, "dx": 0.125, "t": 1.0, "replicas": 1, "geometries": [[[0, 1]]] });
    let cfg = write_cfg(tmp.path(), "c.json", &v);
    let out = kpzlab(&["coalesce", "--config", s(&cfg), "--out", s(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn polymer_check_passes_on_the_shipped_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/polymer_check.json");
    let out = ok(&["polymer-check", "--config", s(&cfg), "--out", s(&tmp.path().join("r"))]);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("PASS"));

    // a tolerance nothing can meet
    let mut v: Value = serde_json::from_slice(&std::fs::read(&cfg).unwrap()).unwrap();
    v["tolerance"] = json!(1e-12);
    let strict = write_cfg(tmp.path(), "strict.json", &v);
    let out = kpzlab(&["polymer-check", "--config", s(&strict), "--out", s(&tmp.path().join("r2"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("FAIL"));
}

#[test]
fn coalesce_agrees_with_pfaffian() {
    let tmp = tempfile::tempdir().unwrap();
    let v = json!({
        "schema_version": 1, "master_seed": 2, "dx": 0.0625, "t": 1.0, "replicas": 4000,
        "geometries": [[[0, 1]], [[0, 0.5], [1.5, 2]]]
    });
    let cfg = write_cfg(tmp.path(), "c.json", &v);
    let out = tmp.path().join("r");
    ok(&["coalesce", "--config", s(&cfg), "--out", s(&out), "--format", "json"]);
    let rows: Vec<Value> = serde_json::from_slice(&std::fs::read(out.join("empty_interval.json")).unwrap()).unwrap();
    assert_eq!(rows.len(), 2);
    for r in rows {
        let z = r["z"].as_f64().unwrap();
        assert!(z.abs() < 3.0, "{r}");
    }
}

#[test]
fn free_polymer_and_stored_reanalysis() {
    let tmp = tempfile::tempdir().unwrap();
    let v = json!({
        "schema_version": 1,
        "master_seed": 5,
        "free_polymer": { "nu": 0.5, "t_list": [1, 2, 4, 8, 16, 32, 64], "replicas": 8, "paths": 400 },
        "scaling": {
            "forcing": { "period": 128, "synthesis": { "mode": "fourier", "n_modes": 64 }, "amplitude": 1.0 },
            "grid_n": 512, "t_list": [2, 4, 8, 16, 32, 64], "replicas": 4
        }
    });
    let cfg = write_cfg(tmp.path(), "e.json", &v);
    let first = tmp.path().join("first");
    ok(&["exponents", "--config", s(&cfg), "--out", s(&first)]);
    let est = |dir: &Path, name: &str| -> f64 {
        let rows = csv_rows(&dir.join("exponents.csv"));
        rows.iter().find(|r| r[0] == name).unwrap_or_else(|| panic!("{name} missing")).get(1).unwrap().parse().unwrap()
    };
    assert!((est(&first, "xi_free") - 0.5).abs() < 0.05);

    // the stored data reproduce the scaling estimates without re-simulating
    let stored = json!({ "schema_version": 1, "master_seed": 5, "stored": first.join("scaling_data.json") });
    let cfg = write_cfg(tmp.path(), "s.json", &stored);
    let second = tmp.path().join("second");
    ok(&["exponents", "--config", s(&cfg), "--out", s(&second)]);
    assert_eq!(est(&first, "xi"), est(&second, "xi"));
    assert_eq!(est(&first, "chi"), est(&second, "chi"));
}

#[test]
fn report_pools_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let v = json!({
        "schema_version": 1, "master_seed": 1,
        "source": { "kind": "coalescing", "dx": 0.25, "period": 512, "n_strips": 32 },
        "mode": "incremental", "fit_min_n": 3
    });
    let cfg = write_cfg(tmp.path(), "r.json", &v);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["renorm", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["renorm", "--config", s(&cfg), "--out", s(&b), "--seed", "2"]);
    let one = tmp.path().join("one");
    ok(&["report", s(&a), "--out", s(&one)]);
    assert_eq!(csv_rows(&one.join("summary.csv")), csv_rows(&a.join("exponents.csv")));

    let two = tmp.path().join("two");
    ok(&["report", s(&a), s(&b), "--out", s(&two)]);
    let row = |p: &Path| -> (f64, f64) {
        let r = &csv_rows(p)[0];
        (r[1].parse().unwrap(), r[2].parse().unwrap())
    };
    let ((va, sa), (vb, sb)) = (row(&a.join("exponents.csv")), row(&b.join("exponents.csv")));
    let (v, se) = row(&two.join("summary.csv"));
    assert!((v - 0.5 * (va + vb)).abs() < 1e-12);
    assert!((se - (sa * sa + sb * sb).sqrt() / 2.0).abs() < 1e-12);
}

#[test]
fn report_rejects_mismatched_and_tampered_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let base = json!({
        "schema_version": 1, "master_seed": 1,
        "source": { "kind": "coalescing", "dx": 0.25, "period": 256, "n_strips": 16 },
        "mode": "incremental"
    });
    let mut other = base.clone();
    other["source"]["period"] = json!(512);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["renorm", "--config", s(&write_cfg(tmp.path(), "a.json", &base)), "--out", s(&a)]);
    ok(&["renorm", "--config", s(&write_cfg(tmp.path(), "b.json", &other)), "--out", s(&b)]);
    let out = kpzlab(&["report", s(&a), s(&b), "--out", s(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(a.join("densities.csv"), "n,density\n1,1\n").unwrap();
    let out = kpzlab(&["report", s(&a), "--out", s(&tmp.path().join("r2"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("densities.csv"));
}
