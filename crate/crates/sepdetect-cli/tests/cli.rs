//! End-to-end checks of the command-line surface: flag grammar, exit codes,
//! manifests, and determinism of the file artifacts.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sepdetect"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin()
        .args(args)
        .current_dir(dir)
        .env_remove("SEPDETECT_SEED")
        .output()
        .expect("binary launches")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn gen_data_count_contract_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "gen-data",
            "--kind",
            "separated",
            "--per-class",
            "50",
            "--dim",
            "2",
            "--seed",
            "7",
            "--out",
            "d.csv",
        ],
        tmp.path(),
    );
    assert_ok(&out);
    let text = std::fs::read_to_string(tmp.path().join("d.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 101); // header + 100 rows
    assert_eq!(lines[0], "f0,f1,label");

    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(tmp.path().join("d.csv.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["subcommand"], "gen-data");
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["outputs"][0], "d.csv");
}

#[test]
fn train_rerun_is_bit_identical_and_inputs_untouched() {
    let tmp = tempfile::tempdir().unwrap();
    assert_ok(&run(
        &[
            "gen-data",
            "--kind",
            "separated",
            "--per-class",
            "40",
            "--seed",
            "3",
            "--out",
            "d.csv",
        ],
        tmp.path(),
    ));
    let data_before = std::fs::read(tmp.path().join("d.csv")).unwrap();
    let train_args = [
        "train", "--data", "d.csv", "--epochs", "5", "--lr", "0.01", "--lambda", "0", "--seed",
        "3", "--hidden", "8,4", "--out", "m.json",
    ];
    assert_ok(&run(&train_args, tmp.path()));
    let first = std::fs::read(tmp.path().join("m.json")).unwrap();
    assert_ok(&run(&train_args, tmp.path()));
    let second = std::fs::read(tmp.path().join("m.json")).unwrap();
    assert_eq!(
        first, second,
        "identical reruns must produce identical checkpoints"
    );
    assert_eq!(
        data_before,
        std::fs::read(tmp.path().join("d.csv")).unwrap(),
        "inputs must not be mutated"
    );
}

#[test]
fn seed_env_fallback_is_equivalent_to_flag() {
    let tmp = tempfile::tempdir().unwrap();
    assert_ok(&run(
        &[
            "gen-data",
            "--kind",
            "separated",
            "--seed",
            "11",
            "--out",
            "flag.csv",
        ],
        tmp.path(),
    ));
    let out = bin()
        .args(["gen-data", "--kind", "separated", "--out", "env.csv"])
        .current_dir(tmp.path())
        .env("SEPDETECT_SEED", "11")
        .output()
        .unwrap();
    assert_ok(&out);
    // Explicit flag wins over the environment.
    let out = bin()
        .args([
            "gen-data",
            "--kind",
            "separated",
            "--seed",
            "11",
            "--out",
            "flagwins.csv",
        ])
        .current_dir(tmp.path())
        .env("SEPDETECT_SEED", "999")
        .output()
        .unwrap();
    assert_ok(&out);
    let flag = std::fs::read(tmp.path().join("flag.csv")).unwrap();
    assert_eq!(flag, std::fs::read(tmp.path().join("env.csv")).unwrap());
    assert_eq!(
        flag,
        std::fs::read(tmp.path().join("flagwins.csv")).unwrap()
    );
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    assert_ok(&run(
        &[
            "gen-data",
            "--kind",
            "separated",
            "--per-class",
            "40",
            "--seed",
            "5",
            "--out",
            "d.csv",
        ],
        tmp.path(),
    ));
    std::fs::write(
        tmp.path().join("cfg.json"),
        r#"{ "epochs": 4, "lambda": 0.0, "seed": 5, "hidden": [8, 4] }"#,
    )
    .unwrap();
    assert_ok(&run(
        &[
            "train", "--data", "d.csv", "--config", "cfg.json", "--out", "a.json",
        ],
        tmp.path(),
    ));
    assert_ok(&run(
        &[
            "train", "--data", "d.csv", "--config", "cfg.json", "--epochs", "6", "--out", "b.json",
        ],
        tmp.path(),
    ));
    let a: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("a.json")).unwrap()).unwrap();
    let b: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("b.json")).unwrap()).unwrap();
    assert_eq!(a["config"]["epochs"], 4);
    assert_eq!(b["config"]["epochs"], 6);
    assert_eq!(b["config"]["lambda"], 0.0);
}

#[test]
fn exit_codes_distinguish_error_classes() {
    let tmp = tempfile::tempdir().unwrap();
    // Missing input file -> I/O error -> exit 2.
    let out = run(
        &["train", "--data", "missing.csv", "--out", "m.json"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());

    // Validation error -> exit 1.
    assert_ok(&run(
        &[
            "gen-data",
            "--kind",
            "separated",
            "--per-class",
            "30",
            "--seed",
            "2",
            "--out",
            "d.csv",
        ],
        tmp.path(),
    ));
    let out = run(
        &[
            "train", "--data", "d.csv", "--lr", "0", "--epochs", "2", "--out", "m.json",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(1));

    // Unknown flag -> nonzero exit with a message on stderr.
    let out = run(&["train", "--no-such-flag"], tmp.path());
    assert_ne!(out.status.code(), Some(0));
    assert!(!out.stderr.is_empty());

    // Schema violation in the data -> validation error -> exit 1.
    std::fs::write(tmp.path().join("bad.csv"), "f0,label\n1.0,-3\n").unwrap();
    let out = run(
        &[
            "train", "--data", "bad.csv", "--epochs", "1", "--out", "m.json",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn provenance_mismatch_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    assert_ok(&run(
        &[
            "gen-data",
            "--kind",
            "separated",
            "--per-class",
            "30",
            "--seed",
            "9",
            "--out",
            "d.csv",
        ],
        tmp.path(),
    ));
    let train_args = |out: &str, seed: &str| {
        [
            "train".to_string(),
            "--data".into(),
            "d.csv".into(),
            "--epochs".into(),
            "3".into(),
            "--hidden".into(),
            "8,4".into(),
            "--seed".into(),
            seed.into(),
            "--out".into(),
            out.into(),
        ]
    };
    let args: Vec<String> = train_args("m1.json", "1").to_vec();
    assert_ok(&bin().args(&args).current_dir(tmp.path()).output().unwrap());
    let args: Vec<String> = train_args("m2.json", "2").to_vec();
    assert_ok(&bin().args(&args).current_dir(tmp.path()).output().unwrap());
    assert_ok(&run(
        &[
            "fit-detector",
            "--checkpoint",
            "m1.json",
            "--train-data",
            "d.csv",
            "--out",
            "dm.json",
        ],
        tmp.path(),
    ));
    // Calibrating against a different checkpoint must fail fast.
    let out = run(
        &[
            "calibrate",
            "--detector",
            "dm.json",
            "--checkpoint",
            "m2.json",
            "--validation",
            "d.csv",
            "--out",
            "cal.json",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("provenance"));
}

#[test]
fn detect_output_schema_and_eval_report() {
    let tmp = tempfile::tempdir().unwrap();
    assert_ok(&run(
        &[
            "gen-data",
            "--kind",
            "separated",
            "--per-class",
            "40",
            "--seed",
            "4",
            "--out",
            "d.csv",
        ],
        tmp.path(),
    ));
    assert_ok(&run(
        &[
            "train", "--data", "d.csv", "--epochs", "8", "--hidden", "8,4", "--seed", "4", "--out",
            "m.json",
        ],
        tmp.path(),
    ));
    assert_ok(&run(
        &[
            "attack",
            "--checkpoint",
            "m.json",
            "--data",
            "d.csv",
            "--epsilon",
            "0.3",
            "--out",
            "adv.csv",
        ],
        tmp.path(),
    ));
    assert_ok(&run(
        &[
            "fit-detector",
            "--checkpoint",
            "m.json",
            "--train-data",
            "d.csv",
            "--out",
            "dm.json",
        ],
        tmp.path(),
    ));
    assert_ok(&run(
        &[
            "calibrate",
            "--detector",
            "dm.json",
            "--checkpoint",
            "m.json",
            "--validation",
            "d.csv",
            "--target-fpr",
            "0.05",
            "--out",
            "cal.json",
        ],
        tmp.path(),
    ));
    assert_ok(&run(
        &[
            "detect",
            "--detector",
            "cal.json",
            "--checkpoint",
            "m.json",
            "--data",
            "adv.csv",
            "--out",
            "flags.csv",
        ],
        tmp.path(),
    ));
    let flags = std::fs::read_to_string(tmp.path().join("flags.csv")).unwrap();
    let mut lines = flags.lines();
    assert_eq!(
        lines.next().unwrap(),
        "row,predicted_class,density,threshold,is_adversarial"
    );
    assert_eq!(lines.count(), 80);

    assert_ok(&run(
        &[
            "eval",
            "--checkpoint",
            "m.json",
            "--detector",
            "cal.json",
            "--clean",
            "d.csv",
            "--adv",
            "adv.csv",
            "--scenario",
            "separated",
            "--out",
            "report.json",
        ],
        tmp.path(),
    ));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["scenario"], "separated");
    assert!(report["metrics"]["auc"].is_f64());
    assert!(report["metrics"]["detection_rate_at_fpr"].is_f64());
    assert!(report["metrics"]["clean_fpr_realized"].is_f64());
    assert!(report["metrics"]["min_class_mean_distance"].is_f64());
    assert!(report["roc"].is_array());
    // Epsilon was picked up from the attack sidecar manifest.
    assert_eq!(report["attack_config"]["epsilon"], 0.3);

    // Without an adversarial set the sections are absent, not null.
    assert_ok(&run(
        &[
            "eval",
            "--checkpoint",
            "m.json",
            "--detector",
            "cal.json",
            "--clean",
            "d.csv",
            "--scenario",
            "separated",
            "--out",
            "clean_only.json",
        ],
        tmp.path(),
    ));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("clean_only.json")).unwrap())
            .unwrap();
    assert!(report["metrics"].get("auc").is_none());
    assert!(report.get("roc").is_none());
    assert!(report.get("attack_config").is_none());
}

#[test]
fn repro_writes_per_seed_reports_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    assert_ok(&run(
        &[
            "repro",
            "--scenario",
            "separated",
            "--seeds",
            "1,2",
            "--out-dir",
            "runs",
        ],
        tmp.path(),
    ));
    for seed in [1, 2] {
        for tag in ["baseline", "separation"] {
            let p = tmp
                .path()
                .join(format!("runs/seed_{seed}/report_{tag}.json"));
            assert!(p.exists(), "{p:?} missing");
        }
    }
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(tmp.path().join("runs/summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["scenario"], "separated");
    assert_eq!(summary["per_seed"].as_array().unwrap().len(), 2);
    assert!(tmp.path().join("runs/summary.json.manifest.json").exists());
}
