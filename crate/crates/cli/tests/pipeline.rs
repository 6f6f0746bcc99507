use std::path::Path;
use std::process::{Command, Output};

fn dampen(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dampen"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = dampen(dir, args);
    assert!(
        out.status.success(),
        "dampen {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn bytes(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

const DATA: [&str; 4] = ["--data", "d.csv", "--errors", "e.json"];

/// synth -> inject -> train -> importances, twice over in `dir`.
fn prepare(dir: &Path, suffix: &str) {
    ok(
        dir,
        &[
            "synth",
            "--n",
            "500",
            "--features",
            "4",
            "--seed",
            "2",
            "--out",
            "d.csv",
        ],
    );
    ok(
        dir,
        &[
            "inject", "--data", "d.csv", "--rate", "0.05", "--seed", "3", "--out", "e.json",
        ],
    );
    let ckpt = format!("m{suffix}.ckpt");
    let mut train = vec![
        "train",
        "--model",
        "2x12",
        "--set",
        "epochs=4",
        "--set",
        "batch_size=50",
        "--seed",
        "4",
        "--out",
        &ckpt,
    ];
    train.extend(DATA);
    ok(dir, &train);
    for part in ["train", "forget"] {
        let out = format!("{part}{suffix}.fim");
        let mut args = vec!["importances", "--model", &ckpt, "--part", part, "--out", &out];
        args.extend(DATA);
        ok(dir, &args);
    }
}

#[test]
fn pipeline_outputs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepare(d, "a");
    prepare(d, "b");
    assert_eq!(bytes(d, "ma.ckpt"), bytes(d, "mb.ckpt"));
    assert_eq!(bytes(d, "traina.fim"), bytes(d, "trainb.fim"));
    assert_eq!(bytes(d, "forgeta.fim"), bytes(d, "forgetb.fim"));

    for run in ["1", "2"] {
        let sweep = format!("s{run}.csv");
        let mut args = vec![
            "sweep",
            "--model",
            "ma.ckpt",
            "--full",
            "traina.fim",
            "--forget",
            "forgeta.fim",
            "--points",
            "3",
            "--out",
            &sweep,
        ];
        args.extend(DATA);
        ok(d, &args);
    }
    assert_eq!(bytes(d, "s1.csv"), bytes(d, "s2.csv"));
    let sweep = String::from_utf8(bytes(d, "s1.csv")).unwrap();
    assert_eq!(
        sweep.lines().next(),
        Some("alpha,retain_acc,forget_acc,mia,dampened_count")
    );
    assert_eq!(sweep.lines().count(), 4);
}

#[test]
fn unlearn_defaults_to_adaptive_and_accepts_fixed_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepare(d, "");
    let base = [
        "unlearn",
        "--model",
        "m.ckpt",
        "--full",
        "train.fim",
        "--forget",
        "forget.fim",
    ];

    let adaptive: serde_json::Value = serde_json::from_str(&ok(
        d,
        &[&base[..], &["--out", "u.ckpt", "--report", "r.json"]].concat(),
    ))
    .unwrap();
    // 20 of 400 training rows were flipped
    let p = adaptive["percentile_p"].as_f64().unwrap();
    assert!(
        (p - (100.0 - (1.0 + 100.0 * 20.0 / 400.0f64).ln())).abs() < 1e-12,
        "{p}"
    );
    assert!(adaptive["chosen_alpha"].as_f64().unwrap() > 0.0);
    let written: serde_json::Value = serde_json::from_slice(&bytes(d, "r.json")).unwrap();
    assert_eq!(written, adaptive);

    let fixed: serde_json::Value = serde_json::from_str(&ok(
        d,
        &[&base[..], &["--alpha", "10", "--lambda", "1", "--out", "f.ckpt"]].concat(),
    ))
    .unwrap();
    assert_eq!(fixed["chosen_alpha"].as_f64(), Some(10.0));
    assert_eq!(fixed["lambda"].as_f64(), Some(1.0));
    assert!(fixed["percentile_p"].is_null());

    let mia: serde_json::Value = serde_json::from_str(&ok(
        d,
        &[&["mia", "--model", "u.ckpt", "--seed", "5"][..], &DATA].concat(),
    ))
    .unwrap();
    let score = mia["score"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&score));
}

#[test]
fn exit_codes_distinguish_usage_from_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(dampen(d, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(dampen(d, &["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(dampen(d, &["--help"]).status.code(), Some(0));
    assert_eq!(
        dampen(d, &["train", "--data", "missing.csv", "--out", "x"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        dampen(
            d,
            &["unlearn", "--model", "m", "--full", "f", "--forget", "g", "--lambda", "2", "--out", "o"]
        )
        .status
        .code(),
        Some(1),
        "--lambda without --alpha"
    );

    std::fs::write(d.join("nodata.toml"), "[model]\nsizes = [\"2x8\"]\n").unwrap();
    let out = dampen(d, &["experiment", "--config", "nodata.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`data`"));

    std::fs::write(d.join("typo.toml"), "[synthetic]\nn = 100\n[study]\nscenarioz = 2\n").unwrap();
    let out = dampen(d, &["experiment", "--config", "typo.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("scenarioz"));

    std::fs::write(d.join("bad.ckpt"), "not a checkpoint").unwrap();
    prepare(d, "");
    let out = dampen(
        d,
        &[
            "unlearn",
            "--model",
            "bad.ckpt",
            "--full",
            "train.fim",
            "--forget",
            "forget.fim",
            "--out",
            "o",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn experiment_writes_deterministic_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("study.toml"),
        "[synthetic]\nn = 400\nd = 4\n\n[model]\nsizes = [\"2x8\"]\n\n[train]\nepochs = 2\nbatch_size = 40\n\n[study]\nrates = [0.05]\nscenarios = 2\n",
    )
    .unwrap();
    ok(d, &["experiment", "--config", "study.toml", "--out", "a"]);
    ok(
        d,
        &["experiment", "--config", "study.toml", "--out", "b", "--workers", "2"],
    );
    ok(
        d,
        &[
            "experiment",
            "--config",
            "study.toml",
            "--out",
            "c",
            "--set",
            "study.scenarios=1",
        ],
    );
    for f in ["aggregate.csv", "scenarios.csv"] {
        assert_eq!(bytes(d, &format!("a/{f}")), bytes(d, &format!("b/{f}")), "{f}");
    }
    let c = String::from_utf8(bytes(d, "c/scenarios.csv")).unwrap();
    assert_eq!(c.lines().count(), 2);
}
