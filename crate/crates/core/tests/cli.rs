use std::path::Path;
use std::process::{Command, Output};

use dse_core::io;

fn dse(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dse"))
        .env_remove("DSE_OUT_DIR")
        .arg("--out")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> serde_json::Value {
    let out = dse(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn train_pair(dir: &Path) {
    ok(dir, &["gen-data", "--skill", "line-x", "--count", "16"]);
    ok(dir, &["gen-data", "--skill", "circle-x", "--count", "16"]);
    let small = ["--epochs", "15", "--hidden", "16,16"];
    ok(dir, &[&["train", "--data", dir.join("line-x.jsonl").to_str().unwrap(), "-o", "m1.json"][..], &small].concat());
    let m1 = dir.join("m1.json");
    ok(
        dir,
        &[
            &["train", "--data", dir.join("circle-x.jsonl").to_str().unwrap(), "-o", "m2.json"][..],
            &["--normalizer-from", m1.to_str().unwrap()],
            &small,
        ]
        .concat(),
    );
    std::fs::write(
        dir.join("ens.json"),
        r#"{"models":[{"path":"m1.json","label":"line-x"},{"path":"m2.json","label":"circle-x"}]}"#,
    )
    .unwrap();
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["--seed", "3", "gen-data", "--skill", "spiral", "--count", "8", "-o", "a.jsonl"]);
    ok(dir.path(), &["--seed", "3", "gen-data", "--skill", "spiral", "--count", "8", "-o", "b.jsonl"]);
    ok(dir.path(), &["--seed", "4", "gen-data", "--skill", "spiral", "--count", "8", "-o", "c.jsonl"]);
    let a = std::fs::read(dir.path().join("a.jsonl")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.jsonl")).unwrap());
    assert_ne!(a, std::fs::read(dir.path().join("c.jsonl")).unwrap());
    let data = io::read_dataset(&dir.path().join("a.jsonl")).unwrap();
    assert_eq!((data.len(), data.traj_len(), data.dof()), (8, 16, 3));
}

#[test]
fn out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_dse"))
        .env("DSE_OUT_DIR", dir.path())
        .args(["gen-data", "--skill", "line-y", "--count", "2"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("line-y.jsonl").is_file());
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(dse(dir.path(), &["gen-data", "--skill", "cartwheel"]).status.code(), Some(2));
    assert_eq!(dse(dir.path(), &["no-such-command"]).status.code(), Some(2));
    assert_eq!(dse(dir.path(), &["mmdfk", "only-one.jsonl"]).status.code(), Some(2));
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"obs\": [1.0]}\nnot json\n").unwrap();
    let out = dse(dir.path(), &["mmdfk", bad.to_str().unwrap(), bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
    let missing = dir.path().join("missing.jsonl");
    let out = dse(dir.path(), &["train", "--data", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn mmdfk_of_one_file_compares_halves() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-data", "--skill", "line-z", "--count", "20"]);
    let f = dir.path().join("line-z.jsonl");
    let f = f.to_str().unwrap();
    let v = ok(dir.path(), &["mmdfk", f, f, "--gamma", "50"]);
    assert_eq!(v["m"], 10);
    assert_eq!(v["n"], 10);
    assert_eq!(v["split"], true);
    assert!(v["mmd_fk"].as_f64().unwrap().abs() < 0.2);
}

#[test]
fn sampling_one_hot_matches_single_model_and_dse_weights_sum_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    train_pair(d);
    let obs = d.join("line-x.jsonl");
    let obs = obs.to_str().unwrap();
    let m1 = d.join("m1.json");
    let ens = d.join("ens.json");
    ok(d, &["sample", "--model", m1.to_str().unwrap(), "--obs-from", obs, "--count", "4", "-o", "s1.jsonl"]);
    ok(
        d,
        &["sample", "--ensemble", ens.to_str().unwrap(), "--weights", "1,0", "--obs-from", obs, "--count", "4", "-o", "s2.jsonl"],
    );
    assert_eq!(std::fs::read(d.join("s1.jsonl")).unwrap(), std::fs::read(d.join("s2.jsonl")).unwrap());

    let bad = dse(d, &["compose-sample", "--ensemble", ens.to_str().unwrap(), "--weights", "1,1", "--obs-from", obs]);
    assert_eq!(bad.status.code(), Some(3));

    let demos = d.join("circle-x.jsonl");
    let v = ok(
        d,
        &[
            "dse", "--ensemble", ens.to_str().unwrap(), "--demos", demos.to_str().unwrap(), "--epochs", "10", "--hidden",
            "16,16", "--opt-iter", "8", "--restarts", "1",
        ],
    );
    let w: Vec<f64> = serde_json::from_value(v["weights"].clone()).unwrap();
    assert_eq!(w.len(), 3);
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(w.iter().all(|&x| x >= 0.0));
    assert!(d.join("few_shot.json").is_file());
}
