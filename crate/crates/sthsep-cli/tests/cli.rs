//! End-to-end tests that drive the compiled `sthsep` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sthsep_cli::report::ForecastReport;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sthsep"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn sthsep")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "sthsep {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path_str(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

/// One tiny dataset shared by most tests: 4 nodes, 256 hourly steps.
fn synth_small(dir: &Path, seed: u64) -> PathBuf {
    let data = dir.join(format!("data_{seed}.csv"));
    run_ok(&[
        "synth",
        "--out",
        &path_str(&data),
        "--nodes",
        "4",
        "--steps",
        "256",
        "--seed",
        &seed.to_string(),
    ]);
    data
}

fn small_train_config(dir: &Path) -> PathBuf {
    let cfg = dir.join("cfg.txt");
    std::fs::write(
        &cfg,
        "window.lookback = 12\n\
         window.horizon = 6\n\
         window.stride = 2\n\
         graph.embed_dim = 3\n\
         graph.hyper_order = 2\n\
         fusion.tblock_channels = 2\n\
         fusion.tblock_dilations = 1,2\n\
         patch.p = 8\n\
         patch.s = 4\n\
         patch.d_m = 8\n\
         transformer.layers = 1\n\
         transformer.heads = 2\n\
         transformer.ffn_width = 8\n\
         train.epochs = 3\n",
    )
    .unwrap();
    cfg
}

fn write_coords(dir: &Path, n: usize) -> PathBuf {
    let coords = dir.join("coords.csv");
    let mut text = String::from("node_id,x,y\n");
    for i in 0..n {
        // Unit spacing on a line keeps every pairwise distance finite.
        text.push_str(&format!("n{i},{}.0,0.0\n", i));
    }
    std::fs::write(&coords, text).unwrap();
    coords
}

#[test]
fn synth_is_byte_identical_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        run_ok(&[
            "synth", "--out", &path_str(out), "--nodes", "3", "--steps", "64", "--seed", "9",
        ]);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let c = dir.path().join("c.csv");
    run_ok(&[
        "synth", "--out", &path_str(&c), "--nodes", "3", "--steps", "64", "--seed", "10",
    ]);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn usage_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = path_str(&dir.path().join("run"));

    // Unknown flag is rejected by the argument parser.
    let out = run(&["train", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));

    // Missing dataset file is an input failure.
    let out = run(&["train", "--data", "/definitely/missing.csv", "--out", &out_dir]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.csv"));

    // Config typos are input failures too, with the offending key named.
    let data = synth_small(dir.path(), 1);
    let cfg = dir.path().join("bad.txt");
    std::fs::write(&cfg, "trian.lr = 0.1\n").unwrap();
    let out = run(&[
        "train",
        "--config",
        &path_str(&cfg),
        "--data",
        &path_str(&data),
        "--out",
        &out_dir,
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("trian.lr"), "stderr was: {err}");
}

#[test]
fn graph_modes_emit_csv() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_small(dir.path(), 2);
    let coords = write_coords(dir.path(), 4);

    // Dense matrix modes: a header plus one labelled row per node.
    for mode in ["adaptive", "gaussian"] {
        let out_csv = dir.path().join(format!("{mode}.csv"));
        run_ok(&[
            "graph",
            "--data",
            &path_str(&data),
            "--coords",
            &path_str(&coords),
            "--mode",
            mode,
            "--out",
            &path_str(&out_csv),
        ]);
        let text = std::fs::read_to_string(&out_csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5, "{mode} rows");
        assert_eq!(lines[0], "node,n0,n1,n2,n3");
        assert!(lines[1].starts_with("n0,"));
    }

    // Hypergraph modes: long-form membership rows, one edge per node.
    for mode in ["knn-hyper", "hop-hyper"] {
        let out_csv = dir.path().join(format!("{mode}.csv"));
        run_ok(&[
            "graph",
            "--data",
            &path_str(&data),
            "--coords",
            &path_str(&coords),
            "--mode",
            mode,
            "--k",
            "2",
            "--out",
            &path_str(&out_csv),
        ]);
        let text = std::fs::read_to_string(&out_csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "edge,node");
        // Duplicate anchor sets merge, so fewer edges than nodes is fine;
        // every node must still show up as a member somewhere.
        let members: std::collections::BTreeSet<&str> = lines[1..]
            .iter()
            .map(|l| l.split(',').nth(1).unwrap())
            .collect();
        assert_eq!(members.len(), 4, "{mode} should cover every node");
        assert!(lines.len() > 1, "{mode} emitted no edges");
    }

    // The distance kernel cannot run without geometry.
    let out = run(&[
        "graph",
        "--data",
        &path_str(&data),
        "--mode",
        "gaussian",
        "--out",
        &path_str(&dir.path().join("no_geo.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_writes_report_checkpoint_and_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_small(dir.path(), 3);
    let cfg = small_train_config(dir.path());
    let run_dir = dir.path().join("run");

    run_ok(&[
        "train",
        "--config",
        &path_str(&cfg),
        "--data",
        &path_str(&data),
        "--out",
        &path_str(&run_dir),
        "--seed",
        "5",
    ]);

    let report = ForecastReport::read(&run_dir.join("report.json")).unwrap();
    assert_eq!(report.schema_version, 1);
    assert_eq!(report.seed, 5);
    assert!(report.splits.val.mae.is_finite() && report.splits.test.rmse.is_finite());
    assert!(report.runtime_s >= 0.0);
    assert_eq!(report.predictions_path.as_deref(), Some("predictions.csv"));

    let preds = std::fs::read_to_string(run_dir.join("predictions.csv")).unwrap();
    assert!(preds.starts_with("window_start,step,node,prediction,target"));
    assert!(preds.lines().count() > 1);

    // Raw JSON carries the documented top-level fields.
    let raw: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("report.json")).unwrap())
            .unwrap();
    for field in ["schema_version", "seed", "config", "splits", "runtime_s"] {
        assert!(raw.get(field).is_some(), "report missing {field}");
    }

    let ckpt: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("checkpoint.json")).unwrap())
            .unwrap();
    assert_eq!(ckpt["magic"], "STHSEP1");
}

#[test]
fn eval_reproduces_the_training_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_small(dir.path(), 4);
    let cfg = small_train_config(dir.path());
    let run_dir = dir.path().join("run");
    run_ok(&[
        "train",
        "--config",
        &path_str(&cfg),
        "--data",
        &path_str(&data),
        "--out",
        &path_str(&run_dir),
    ]);
    let train_report = ForecastReport::read(&run_dir.join("report.json")).unwrap();

    let eval_path = dir.path().join("eval.json");
    run_ok(&[
        "eval",
        "--checkpoint",
        &path_str(&run_dir.join("checkpoint.json")),
        "--data",
        &path_str(&data),
        "--out",
        &path_str(&eval_path),
    ]);
    let eval_report = ForecastReport::read(&eval_path).unwrap();

    for (a, b) in [
        (train_report.splits.val.mae, eval_report.splits.val.mae),
        (train_report.splits.val.rmse, eval_report.splits.val.rmse),
        (train_report.splits.test.mae, eval_report.splits.test.mae),
        (train_report.splits.test.rmse, eval_report.splits.test.rmse),
    ] {
        assert!((a - b).abs() <= 1e-12, "metric drifted: {a} vs {b}");
    }
    assert!(eval_report.predictions_path.is_none());
}

#[test]
fn ablate_emits_one_row_per_setting_with_a_shared_hash() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_small(dir.path(), 6);
    let cfg = small_train_config(dir.path());
    let out_dir = dir.path().join("abl");
    run_ok(&[
        "ablate",
        "--config",
        &path_str(&cfg),
        "--data",
        &path_str(&data),
        "--out",
        &path_str(&out_dir),
        "--sweep",
        "temporal",
    ]);

    let text = std::fs::read_to_string(out_dir.join("ablation_temporal.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "sweep,setting,data_hash,seed,val_mae,val_rmse,test_mae,test_rmse,runtime_s"
    );
    assert_eq!(lines.len(), 3);
    let hash = |l: &str| l.split(',').nth(2).unwrap().to_string();
    assert_eq!(hash(lines[1]), hash(lines[2]));
    assert_eq!(hash(lines[1]).len(), 64);
    assert!(lines[1].contains("temporal=on") && lines[2].contains("temporal=off"));
}
