//! End-to-end tests of the `dtkc` binary: exit codes, the train/eval
//! round trip, the sweep/train equivalence, and the seed override.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dtkc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dtkc"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn dtkc");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_config(dir: &Path, dataset: &str, seed: u64) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "batch_size": 20,
        "epochs": 3,
        "n_runs": 2,
        "seed": seed,
        "lambda": 0.0,
        "architecture": {
            "backbone": { "kind": "conv", "blocks": [ { "channels": 3, "kernel": 3 } ] },
            "hidden_units": 8
        },
        "dataset": dataset,
    });
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn make_blobs(dir: &Path) -> std::path::PathBuf {
    let data = dir.join("data");
    run_ok(dtkc().args([
        "make-data",
        "blobs",
        "--k",
        "2",
        "--per-cluster",
        "10",
        "--side",
        "8",
        "--seed",
        "4",
        "--out",
        data.to_str().unwrap(),
    ]));
    data
}

#[test]
fn unknown_flag_and_subcommand_exit_two() {
    let out = dtkc().arg("definitely-not-a-command").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = dtkc().args(["train", "--bogus-flag", "x"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = dtkc().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn train_then_eval_reproduces_selected_accuracy_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let data = make_blobs(tmp.path());
    let cfg = write_config(tmp.path(), data.to_str().unwrap(), 11);
    let out_dir = tmp.path().join("out");

    let out = run_ok(dtkc().args([
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let selected = summary["accuracy"]["selected"].as_f64().unwrap();
    let best_run = summary["best_run_index"].as_u64().unwrap();

    let ckpt = out_dir.join(format!("checkpoints/run_{best_run}"));
    let out = run_ok(dtkc().args([
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
    ]));
    let eval: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let acc = eval["accuracy"].as_f64().unwrap();
    assert_eq!(acc.to_bits(), selected.to_bits(), "{acc} vs {selected}");
    assert!(eval["nmi"].as_f64().unwrap() >= 0.0);
}

#[test]
fn train_twice_same_seed_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let data = make_blobs(tmp.path());
    let cfg = write_config(tmp.path(), data.to_str().unwrap(), 13);
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    for out in [&out_a, &out_b] {
        run_ok(dtkc().args([
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]));
    }
    for rel in ["runs/run_0.json", "runs/run_1.json", "summary.json"] {
        let a = fs::read(out_a.join(rel)).unwrap();
        let b = fs::read(out_b.join(rel)).unwrap();
        assert_eq!(a, b, "{rel} differs between reruns");
    }
    for run in 0..2 {
        let dir_a = out_a.join(format!("checkpoints/run_{run}"));
        for entry in fs::read_dir(&dir_a).unwrap() {
            let name = entry.unwrap().file_name();
            let a = fs::read(dir_a.join(&name)).unwrap();
            let b = fs::read(out_b.join(format!("checkpoints/run_{run}")).join(&name)).unwrap();
            assert_eq!(a, b, "checkpoint file {name:?} differs");
        }
    }
}

#[test]
fn sweep_lambda_zero_equals_plain_train_invocation() {
    let tmp = tempfile::tempdir().unwrap();
    let data = make_blobs(tmp.path());
    let cfg = write_config(tmp.path(), data.to_str().unwrap(), 17);
    let train_out = tmp.path().join("train");
    run_ok(dtkc().args([
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        train_out.to_str().unwrap(),
    ]));
    let sweep_out = tmp.path().join("sweep");
    run_ok(dtkc().args([
        "sweep",
        "--param",
        "lambda",
        "--values",
        "0",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        sweep_out.to_str().unwrap(),
    ]));
    for rel in ["runs/run_0.json", "runs/run_1.json"] {
        let a = fs::read(train_out.join(rel)).unwrap();
        let b = fs::read(sweep_out.join("cells/lambda_0").join(rel)).unwrap();
        assert_eq!(a, b, "{rel}: sweep cell differs from train");
    }
    assert!(sweep_out.join("sweep.csv").exists());
    assert!(sweep_out.join("sweep.json").exists());
}

#[test]
fn dtkc_seed_env_overrides_config_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let data = make_blobs(tmp.path());
    let cfg = write_config(tmp.path(), data.to_str().unwrap(), 11);
    let out_dir = tmp.path().join("out");
    let out = run_ok(dtkc()
        .env("DTKC_SEED", "999")
        .args([
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ]));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["seed"].as_u64(), Some(999));
}

#[test]
fn training_proceeds_without_labels_and_eval_requires_them() {
    let tmp = tempfile::tempdir().unwrap();
    let data = make_blobs(tmp.path());
    // strip labels
    fs::remove_file(data.join("labels.i32")).unwrap();
    let meta_path = data.join("meta.json");
    let mut meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&meta_path).unwrap()).unwrap();
    meta["has_labels"] = serde_json::json!(false);
    fs::write(&meta_path, serde_json::to_string(&meta).unwrap()).unwrap();

    let cfg = write_config(tmp.path(), data.to_str().unwrap(), 19);
    let out_dir = tmp.path().join("out");
    let out = run_ok(dtkc().args([
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(summary["accuracy"].is_null());

    let eval = dtkc()
        .args([
            "eval",
            "--checkpoint",
            out_dir.join("checkpoints/run_0").to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(eval.status.code(), Some(1), "eval without labels must fail");
}

#[test]
fn ofm_and_viz_commands_produce_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = make_blobs(tmp.path());
    let cfg = write_config(tmp.path(), data.to_str().unwrap(), 23);
    let out_dir = tmp.path().join("out");
    run_ok(dtkc().args([
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]));

    let out = run_ok(dtkc().args([
        "ofm",
        "--run",
        out_dir.join("runs/run_0.json").to_str().unwrap(),
    ]));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["correlation"].is_number());
    assert_eq!(report["loss"].as_array().unwrap().len(), 3);

    let grid = tmp.path().join("grid.pgm");
    let grid2 = tmp.path().join("grid2.pgm");
    for g in [&grid, &grid2] {
        run_ok(dtkc().args([
            "viz-clusters",
            "--checkpoint",
            out_dir.join("checkpoints/run_0").to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--out",
            g.to_str().unwrap(),
        ]));
    }
    assert!(grid.exists());
    // exports are deterministic given params and dataset
    assert_eq!(fs::read(&grid).unwrap(), fs::read(&grid2).unwrap());

    let imp = tmp.path().join("imp");
    run_ok(dtkc().args([
        "viz-importance",
        "--checkpoint",
        out_dir.join("checkpoints/run_0").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--layer",
        "0",
        "--out",
        imp.to_str().unwrap(),
        "--count",
        "3",
    ]));
    assert!(imp.join("layer0_obs0.pgm").exists());
    assert!(imp.join("importance.json").exists());

    let imp_main = tmp.path().join("imp_main");
    run_ok(dtkc().args([
        "viz-importance",
        "--checkpoint",
        out_dir.join("checkpoints/run_0").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--layer",
        "main",
        "--out",
        imp_main.to_str().unwrap(),
        "--count",
        "3",
    ]));
    assert!(imp_main.join("main_obs0.pgm").exists());
}

#[test]
fn make_data_seqs_and_corrupt_dataset_is_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("seqs");
    run_ok(dtkc().args([
        "make-data",
        "seqs",
        "--k",
        "2",
        "--per-cluster",
        "5",
        "--dim",
        "2",
        "--min-len",
        "8",
        "--max-len",
        "12",
        "--seed",
        "3",
        "--out",
        data.to_str().unwrap(),
    ]));
    // corrupt the payload
    let payload = data.join("data.f32");
    let bytes = fs::read(&payload).unwrap();
    fs::write(&payload, &bytes[..bytes.len() - 4]).unwrap();
    let cfg = write_config(tmp.path(), data.to_str().unwrap(), 27);
    let out = dtkc()
        .args([
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            tmp.path().join("out").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("corrupt"), "stderr: {stderr}");
}
