use std::path::Path;
use std::process::{Command, Output};

fn qfan(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qfan"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&qfan(dir.path(), &["--help"])), 0);
    assert_eq!(code(&qfan(dir.path(), &["--version"])), 0);
    assert_eq!(code(&qfan(dir.path(), &["train", "--help"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&qfan(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&qfan(dir.path(), &["gen-data", "--d", "twelve"])), 1);
    assert_eq!(
        code(&qfan(
            dir.path(),
            &[
                "evaluate",
                "--truth",
                "a",
                "--gen",
                "b",
                "--blocks",
                "2",
                "--block-size",
                "6"
            ]
        )),
        1
    );
    assert_eq!(
        code(&qfan(dir.path(), &["scale-table", "--d", "12,368", "--nq", "3"])),
        1
    );
    assert_eq!(code(&qfan(dir.path(), &["theory-check", "--suite", "noise"])), 1);
}

#[test]
fn validation_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&qfan(p, &["train", "--data", "missing.bin"])), 2);
    assert_eq!(code(&qfan(p, &["gen-data", "--d", "0", "--out", "x.bin"])), 2);
    std::fs::write(p.join("bad.toml"), "schema_version = 1\n[train]\nstepz = 3\n").unwrap();
    assert_eq!(code(&qfan(p, &["gen-data", "--n", "50", "--out", "d.bin"])), 0);
    assert_eq!(code(&qfan(p, &["train", "--data", "d.bin", "--config", "bad.toml"])), 2);
    std::fs::write(p.join("corrupt.bin"), b"QFANDS 1 2 2 f64le 0000000000000000\n\0\0").unwrap();
    assert_eq!(code(&qfan(p, &["split", "--data", "corrupt.bin"])), 2);
    assert_eq!(
        code(&qfan(p, &["split", "--data", "d.bin", "--train", "40", "--test", "40"])),
        2
    );
}

#[test]
fn gen_data_writes_csv_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let out = qfan(
        p,
        &[
            "gen-data",
            "--d",
            "25",
            "--n",
            "30",
            "--seed",
            "2",
            "--out",
            "sub/data.csv",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(p.join("sub/data.csv")).unwrap();
    let lines: Vec<&str> = csv
        .lines()
        .filter(|l| l.chars().next().is_some_and(|c| c.is_ascii_digit()))
        .collect();
    assert_eq!(lines.len(), 30);
    assert!(lines.iter().all(|l| l.split(',').count() == 25));
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p.join("sub/data.csv.meta.json")).unwrap()).unwrap();
    assert_eq!(
        (meta["n"].as_u64(), meta["d"].as_u64(), meta["seed"].as_u64()),
        (Some(30), Some(25), Some(2))
    );
}

#[test]
fn out_dir_sets_default_paths() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_qfan"))
        .current_dir(dir.path())
        .env("QFAN_OUT_DIR", "results")
        .args(["gen-data", "--n", "20"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("results/data.bin").exists());
}

#[test]
fn recipe_file_changes_the_data() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("flat.toml"), "schema_version = 1\n[recipe]\nfluctuation = 0.0\n").unwrap();
    assert!(qfan(p, &["gen-data", "--n", "20", "--out", "a.bin"]).status.success());
    assert!(
        qfan(p, &["gen-data", "--n", "20", "--recipe", "flat.toml", "--out", "b.bin"])
            .status
            .success()
    );
    assert_ne!(
        std::fs::read(p.join("a.bin")).unwrap(),
        std::fs::read(p.join("b.bin")).unwrap()
    );
    std::fs::write(p.join("typo.toml"), "schema_version = 1\n[recipe]\nfluctuaton = 0.0\n").unwrap();
    assert_eq!(code(&qfan(p, &["gen-data", "--recipe", "typo.toml"])), 2);
}

#[test]
fn train_generate_evaluate_round() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(
        p.join("c.toml"),
        "schema_version = 1\n[train]\nsteps = 4\nbatch = 16\nshots = 64\n",
    )
    .unwrap();
    let run = |args: &[&str]| {
        let out = qfan(p, args);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    };
    run(&["gen-data", "--n", "700", "--out", "d.bin"]);
    run(&["split", "--data", "d.bin", "--train", "500", "--test", "200"]);
    let stdout = run(&["train", "--data", "train.bin", "--config", "c.toml", "--out", "b"]);
    assert!(stdout.contains("circuits 256"), "{stdout}");
    let history = std::fs::read_to_string(p.join("b/history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 4);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p.join("b/train_report.json")).unwrap()).unwrap();
    assert_eq!(report["circuits"], 256);
    run(&[
        "generate", "--bundle", "b", "--n", "50", "--shots", "128", "--out", "g.bin",
    ]);
    let prov: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p.join("g.bin.provenance.json")).unwrap()).unwrap();
    assert_eq!(prov["shots"], 128);
    assert_eq!(prov["bundle_hash"], report["bundle_hash"]);
    run(&[
        "evaluate",
        "--truth",
        "test.bin",
        "--gen",
        "g.bin",
        "--block-size",
        "6",
        "--out",
        "ev/r.json",
    ]);
    for f in [
        "r.json",
        "marginals.csv",
        "corr_truth.csv",
        "corr_gen.csv",
        "corr_diff.csv",
        "energy.csv",
    ] {
        assert!(p.join("ev").join(f).exists(), "{f}");
    }
    // A bundle trained on 12 pixels cannot drive a 25-pixel evaluation.
    run(&["gen-data", "--d", "25", "--n", "20", "--out", "wide.bin"]);
    assert_eq!(
        code(&qfan(p, &["evaluate", "--truth", "wide.bin", "--gen", "g.bin"])),
        2
    );
}
