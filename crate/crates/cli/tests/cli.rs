use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn equimap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_equimap"))
        .args(args)
        .output()
        .expect("spawn equimap")
}

fn ok(args: &[&str]) -> Output {
    let out = equimap(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(args: &[&str]) -> i32 {
    equimap(args).status.code().expect("exit code")
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).expect("read json")).expect("parse json")
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).expect("read csv").lines().next().unwrap_or_default().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

#[test]
fn help_lists_subcommands_and_global_flags() {
    let out = ok(&["--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for word in [
        "synth",
        "extract",
        "train-net",
        "learn-map",
        "eval-map",
        "learn-translayer",
        "stitch",
        "invariance",
        "compensate",
        "bench-pose",
        "selftest",
        "--seed",
        "--threads",
        "--verbose",
        "--config",
        "--dry-run",
        "--output",
    ] {
        assert!(text.contains(word), "help lacks {word}");
    }
    let out = ok(&["learn-map", "--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for flag in ["--g", "--method", "--k", "--m", "--lambda", "--metric", "--train"] {
        assert!(text.contains(flag), "learn-map help lacks {flag}");
    }
}

#[test]
fn usage_and_config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    assert_eq!(code(&["synth", "--bogus", "1"]), 2);
    assert_eq!(code(&["learn-map", "--method", "magic", "-o", s(&out)]), 2);
    assert_eq!(code(&["synth", "--kind", "stars", "-o", s(&out)]), 2);
    assert_eq!(code(&["extract", "-o", s(&out)]), 2);

    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"params": {"n": 3, "colour": "red"}}"#).unwrap();
    assert_eq!(code(&["synth", "--config", s(&cfg), "-o", s(&out)]), 2);
    fs::write(&cfg, r#"{"command": "learn-map"}"#).unwrap();
    assert_eq!(code(&["synth", "--config", s(&cfg), "-o", s(&out)]), 2);
    fs::write(&cfg, "not json").unwrap();
    assert_eq!(code(&["synth", "--config", s(&cfg), "-o", s(&out)]), 2);
    assert!(!out.exists());
}

#[test]
fn runtime_failures_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.eqm");
    assert_eq!(code(&["eval-map", "--map", s(&missing), "-o", s(&dir.path().join("o"))]), 1);
}

#[test]
fn dry_run_prints_plan_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"seed": 4, "params": {"k": 2, "method": "rr"}}"#).unwrap();
    let out_dir = dir.path().join("run");
    let out = ok(&["learn-map", "--config", s(&cfg), "--method", "fs", "--dry-run", "-o", s(&out_dir)]);
    let plan: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(plan["config"]["command"], "learn-map");
    assert_eq!(plan["config"]["seed"], 4);
    assert_eq!(plan["config"]["params"]["k"], 2);
    assert_eq!(plan["config"]["params"]["method"], "fs");
    assert_eq!(plan["config"]["params"]["g"], "rot:45");
    let outputs = plan["outputs"].as_array().unwrap();
    assert!(outputs.iter().any(|o| o.as_str().unwrap().ends_with("map.eqm")));
    assert!(!out_dir.exists());
}

#[test]
fn synth_writes_dataset_with_index() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    ok(&["synth", "--kind", "class", "--n", "12", "--classes", "3", "--seed", "1", "-o", s(&out)]);
    let index = json(&out.join("index.json"));
    assert_eq!(index.as_array().unwrap().len(), 12);
    assert!(out.join("000011.pgm").exists());
    assert_eq!(json(&out.join("config.json"))["seed"], 1);

    let again = dir.path().join("again");
    ok(&["synth", "--kind", "class", "--n", "12", "--classes", "3", "--seed", "1", "-o", s(&again)]);
    assert_eq!(fs::read(out.join("000005.pgm")).unwrap(), fs::read(again.join("000005.pgm")).unwrap());

    let pose = dir.path().join("pose");
    ok(&["synth", "--kind", "pose", "--n", "3", "--size", "48", "--family", "affine", "-o", s(&pose)]);
    assert!(json(&pose.join("index.json"))[0]["pose"].is_array());
}

#[test]
fn learn_extract_and_evaluate_a_map() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train");
    let test = dir.path().join("test");
    ok(&["synth", "--kind", "generic", "--n", "24", "--size", "32", "-o", s(&train)]);
    ok(&["synth", "--kind", "generic", "--n", "8", "--size", "32", "--split", "test", "-o", s(&test)]);

    let feats = dir.path().join("feats");
    ok(&["extract", "--input", s(&test), "-o", s(&feats)]);
    assert_eq!(header(&feats.join("features.csv")), "index,width,height,depth,mean,l2_norm");
    assert_eq!(json(&feats.join("summary.json"))["dims"], serde_json::json!([4, 4, 31]));

    let learn = |out: &Path| {
        ok(&[
            "learn-map", "--g", "rot180", "--method", "fs", "--k", "3", "--m", "3", "--train", s(&train), "--test",
            s(&test), "--seed", "2", "-o", s(out),
        ])
    };
    let a = dir.path().join("map_a");
    let b = dir.path().join("map_b");
    learn(&a);
    learn(&b);
    let metrics = a.join("metrics.csv");
    assert!(header(&metrics).starts_with("split,metric,count,error_mean"));
    assert_eq!(fs::read(&metrics).unwrap(), fs::read(b.join("metrics.csv")).unwrap());
    let summary = json(&a.join("summary.json"));
    assert!(summary["test"]["error"]["mean"].as_f64().unwrap() < 1e-6);

    let ev = dir.path().join("eval");
    ok(&["eval-map", "--map", s(&a.join("map.eqm")), "--data", s(&test), "-o", s(&ev)]);
    let e = json(&ev.join("summary.json"));
    assert!(e["evaluation"]["error"]["mean"].as_f64().unwrap() < 1e-6);
}

#[test]
fn flags_override_config_file_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"command": "synth", "seed": 9, "params": {"kind": "generic", "n": 5, "size": 16}}"#).unwrap();
    let out = dir.path().join("d");
    ok(&["--config", s(&cfg), "synth", "--n", "2", "-o", s(&out)]);
    assert_eq!(json(&out.join("index.json")).as_array().unwrap().len(), 2);
    let resolved = json(&out.join("config.json"));
    assert_eq!(resolved["seed"], 9);
    assert_eq!(resolved["params"]["size"], 16);

    // The written configuration reproduces the run.
    let replay = dir.path().join("r");
    ok(&["synth", "--config", s(&out.join("config.json")), "-o", s(&replay)]);
    assert_eq!(fs::read(out.join("000001.pgm")).unwrap(), fs::read(replay.join("000001.pgm")).unwrap());
}

#[test]
fn network_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let small = ["--n-train", "64", "--n-test", "32"];
    let net_a = dir.path().join("a");
    let net_b = dir.path().join("b");
    let (saved_a, saved_b) = (net_a.join("net"), net_b.join("net"));
    for (seed, out) in [("1", &net_a), ("2", &net_b)] {
        let mut args = vec!["train-net", "--epochs", "1", "--classes", "3", "--seed", seed, "-o", s(out)];
        args.extend(small);
        ok(&args);
    }
    assert_eq!(header(&net_a.join("curve.csv")), "epoch,train_loss");
    assert!(net_a.join("net").is_dir());

    let tl = dir.path().join("tl");
    let mut args = vec![
        "learn-translayer", "--net", s(&saved_a), "--probe", "4", "--g", "hflip", "--epochs", "1", "-o", s(&tl),
    ];
    args.extend(small);
    ok(&args);
    let r = json(&tl.join("summary.json"));
    assert!(r["compensated_error"].as_f64().is_some());

    let inv = dir.path().join("inv");
    ok(&[
        "invariance", "--net", s(&saved_a), "--layer", s(&tl.join("layer")), "--probe", "4", "--g", "hflip",
        "--n-test", "32", "-o", s(&inv),
    ]);
    assert_eq!(header(&inv.join("scores.csv")), "channel,score,rank");
    assert!(json(&inv.join("summary.json"))["accepted_p"].as_u64().is_some());

    let st = dir.path().join("st");
    let mut args = vec![
        "stitch", "--net-a", s(&saved_a), "--net-b", s(&saved_b), "--probe", "1", "--epochs", "1",
        "-o", s(&st),
    ];
    args.extend(small);
    ok(&args);
    let r = json(&st.join("summary.json"));
    for key in ["single_error_b", "identity_error", "learned_error"] {
        assert!(r[key].as_f64().is_some(), "missing {key}");
    }
}

#[test]
fn compensate_and_bench_pose_write_csv() {
    let dir = tempfile::tempdir().unwrap();
    let comp = dir.path().join("comp");
    ok(&[
        "compensate", "--max-angle", "90", "--step", "90", "--n-train", "40", "--n-test", "20", "--n-generic", "20",
        "-o", s(&comp),
    ]);
    let curve = fs::read_to_string(comp.join("curve.csv")).unwrap();
    assert_eq!(curve.lines().next().unwrap(), "transform,original,uncompensated,compensated");
    assert_eq!(curve.lines().count(), 3);

    let bp = dir.path().join("bp");
    ok(&[
        "bench-pose", "--family", "rotation", "--size", "48", "--n-train", "12", "--n-test", "6", "--n-generic", "4",
        "--epochs", "1", "--warmup", "0", "-o", s(&bp),
    ]);
    let csv = fs::read_to_string(bp.join("bench.csv")).unwrap();
    assert!(csv.starts_with("feature,family,mode,error,ms_per_transform,speedup"));
    for mode in ["baseline", "direct", "equivariant"] {
        assert!(csv.contains(mode), "bench.csv lacks {mode}");
    }
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("st");
    ok(&["selftest", "--cases", "20", "--threads", "1", "-o", s(&out)]);
    let checks = json(&out.join("summary.json"));
    assert!(checks.as_array().unwrap().iter().all(|c| c["pass"] == true));
}
