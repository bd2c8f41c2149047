//! The binary's contract: exit codes, output files and JSON lines.

use std::path::Path;
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

fn eigencoin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eigencoin"))
        .args(args)
        .current_dir(dir)
        .env_remove("EIGENCOIN_CONFIG")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout_lines(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap_or_else(|e| panic!("not JSON: {l}: {e}")))
        .collect()
}

/// A synthesized dataset and a model trained on it, shared across tests.
fn trained() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let out = eigencoin(dir.path(), &["synth", "--preset", "balanced-small", "--out", "data"]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let out = eigencoin(
            dir.path(),
            &[
                "train",
                "--manifest",
                "data/manifest.json",
                "--set",
                "classifier.k=6",
                "--out",
                "run",
            ],
        );
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        dir
    })
    .path()
}

fn first_png(dir: &Path) -> String {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    files.sort();
    files[0].display().to_string()
}

#[test]
fn help_and_bad_arguments() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&eigencoin(tmp.path(), &["--help"])), 0);
    assert_eq!(code(&eigencoin(tmp.path(), &["frobnicate"])), 1);
    assert_eq!(code(&eigencoin(tmp.path(), &["synth"])), 1);
    assert_eq!(
        code(&eigencoin(tmp.path(), &["synth", "--preset", "no-such-preset"])),
        1
    );
}

#[test]
fn config_errors_are_usage_errors() {
    let root = trained();
    let m = "data/manifest.json";
    for set in [
        "classifier.bogus=1",
        "classifier.k=-3",
        "noequals",
        "classifier.threshold=-1",
        "dataset.fraction=1.5",
    ] {
        let out = eigencoin(root, &["train", "--manifest", m, "--set", set, "--out", "bad"]);
        assert_eq!(code(&out), 1, "--set {set}: {}", String::from_utf8_lossy(&out.stderr));
    }
    // more eigenvectors than the training set supports
    let out = eigencoin(
        root,
        &["train", "--manifest", m, "--set", "classifier.k=500", "--out", "bad"],
    );
    assert_eq!(code(&out), 1);
    let out = eigencoin(
        root,
        &[
            "compare",
            "--manifest",
            m,
            "--methods",
            "eigencoin,nope",
            "--out",
            "bad",
        ],
    );
    assert_eq!(code(&out), 1);
    let out = eigencoin(
        root,
        &[
            "sweep",
            "--manifest",
            m,
            "--ks",
            "1,2",
            "--set",
            "classifier.method=wavelet",
            "--out",
            "bad",
        ],
    );
    assert_eq!(code(&out), 1);
}

#[test]
fn data_errors() {
    let root = trained();
    let out = eigencoin(root, &["classify", "--model", "missing.ecm", "x.png"]);
    assert_eq!(code(&out), 2);
    let out = eigencoin(
        root,
        &[
            "eval",
            "--model",
            "run/model.ecm",
            "--manifest",
            "nowhere/manifest.json",
            "--out",
            "bad",
        ],
    );
    assert_eq!(code(&out), 2);
    std::fs::write(root.join("garbage.ecm"), b"EIGCOIN1 but not really").unwrap();
    let out = eigencoin(root, &["classify", "--model", "garbage.ecm", "x.png"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn classify_prints_one_line_per_image() {
    let root = trained();
    let good = first_png(&root.join("data/00_khosrow_i"));
    std::fs::write(root.join("blank.png"), []).unwrap();
    let out = eigencoin(
        root,
        &[
            "classify",
            "--model",
            "run/model.ecm",
            &good,
            "blank.png",
            "--out",
            "cls",
        ],
    );
    assert_eq!(code(&out), 0);
    let lines = stdout_lines(&out);
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["image"], good.as_str());
    assert!(lines[0]["label"].is_string());
    assert!(lines[0]["distance"].as_f64().unwrap() >= 0.0);
    assert!(lines[0]["runner_up"].as_f64().unwrap() >= lines[0]["distance"].as_f64().unwrap());
    assert_eq!(lines[1]["stage"], "load");

    let strict = eigencoin(
        root,
        &[
            "classify",
            "--model",
            "run/model.ecm",
            &good,
            "blank.png",
            "--strict",
            "--out",
            "cls",
        ],
    );
    assert_eq!(code(&strict), 2);
    assert_eq!(stdout_lines(&strict).len(), 2);
}

#[test]
fn zero_threshold_rejects() {
    let root = trained();
    let out = eigencoin(
        root,
        &[
            "train",
            "--manifest",
            "data/manifest.json",
            "--set",
            "classifier.k=6",
            "--set",
            "classifier.threshold=0",
            "--out",
            "zero",
        ],
    );
    assert_eq!(code(&out), 0);
    let img = first_png(&root.join("data/01_khosrow_ii"));
    let lines = stdout_lines(&eigencoin(
        root,
        &["classify", "--model", "zero/model.ecm", &img, "--out", "zero"],
    ));
    assert_eq!(lines[0]["label"], "REJECTED");
    assert!(lines[0]["class_id"].is_null());
}

#[test]
fn eval_writes_consistent_reports() {
    let root = trained();
    let out = eigencoin(
        root,
        &[
            "eval",
            "--model",
            "run/model.ecm",
            "--manifest",
            "data/manifest.json",
            "--out",
            "ev",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("ev/eval_report.json")).unwrap()).unwrap();
    assert_eq!(report["command"], "eval");
    assert_eq!(report["format_version"], 1);
    let scores = &report["report"]["scores"];
    let counts: Vec<u64> = scores["test_counts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    let csv = std::fs::read_to_string(root.join("ev/confusion.csv")).unwrap();
    let mut rows = csv.lines();
    assert!(rows.next().unwrap().starts_with("true\\pred,"));
    for (row, want) in rows.zip(&counts) {
        let sum: u64 = row.split(',').skip(1).map(|v| v.parse::<u64>().unwrap()).sum();
        assert_eq!(sum, *want);
    }
    assert!(root.join("ev/rates.csv").exists());
    assert!(root.join("ev/run.log").exists());
}

#[test]
fn provenance_follows_layers() {
    let root = trained();
    std::fs::write(
        root.join("cfg.json"),
        r#"{"classifier": {"method": "eigencoin", "k": 4}, "eval": {"alpha_mode": "reciprocal"}}"#,
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_eigencoin"))
        .args([
            "train",
            "--manifest",
            "data/manifest.json",
            "--set",
            "classifier.k=5",
            "--out",
            "prov",
        ])
        .env("EIGENCOIN_CONFIG", "cfg.json")
        .current_dir(root)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("prov/train_report.json")).unwrap()).unwrap();
    let rc = &report["run_config"];
    assert_eq!(rc["values"]["classifier"]["k"], 5);
    assert_eq!(rc["provenance"]["classifier.k"], "flag");
    assert_eq!(rc["provenance"]["eval.alpha_mode"], "file");
    assert_eq!(rc["provenance"]["preprocess.normalized_size"], "default");
    assert_eq!(report["k"], 5);
}

#[test]
fn preprocess_summarizes_failures() {
    let root = trained();
    let empty = root.join("empty_in");
    std::fs::create_dir_all(&empty).unwrap();
    let out = eigencoin(root, &["preprocess", "empty_in", "--out", "pp_empty"]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout_lines(&out)[0]["total"], 0);

    let mixed = root.join("mixed_in");
    std::fs::create_dir_all(&mixed).unwrap();
    std::fs::copy(first_png(&root.join("data/00_khosrow_i")), mixed.join("coin.png")).unwrap();
    image_blank(&mixed.join("flat.png"));
    let out = eigencoin(root, &["preprocess", "mixed_in", "--out", "pp_mixed"]);
    assert_eq!(code(&out), 0);
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("pp_mixed/preprocess_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["successes"], 1);
    assert_eq!(summary["failures"], 1);
    let items = summary["items"].as_array().unwrap();
    let flat = items.iter().find(|i| i["source"] == "flat.png").unwrap();
    assert_eq!(flat["status"], "segmentation_failure");
    assert!(flat["stage"].is_string());
    assert!(root.join("pp_mixed/coin.png").exists());
    assert_eq!(
        code(&eigencoin(
            root,
            &["preprocess", "mixed_in", "--strict", "--out", "pp_strict"]
        )),
        2
    );
}

/// A uniform grey image, which has no edges to segment.
fn image_blank(path: &Path) {
    let img = eigencoin::imaging::GrayImage::<f64>::filled(48, 48, 0.5).unwrap();
    img.save_png(path).unwrap();
}

#[test]
fn sweep_and_compare_outputs() {
    let root = trained();
    let out = eigencoin(
        root,
        &[
            "sweep",
            "--manifest",
            "data/manifest.json",
            "--ks",
            "4,1,2,2",
            "--out",
            "sw",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(root.join("sw/sweep.csv")).unwrap();
    let ks: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ks, ["1", "2", "4"]);
    assert!(csv.lines().next().unwrap().ends_with("weighted_precision,mse_train"));

    let out = eigencoin(
        root,
        &[
            "compare",
            "--manifest",
            "data/manifest.json",
            "--methods",
            "bdpca,wavelet",
            "--set",
            "compare.bdpca={\"method\":\"bdpca\",\"k_r\":6,\"k_c\":6}",
            "--out",
            "cmp",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(root.join("cmp/compare.csv")).unwrap();
    let methods: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["bdpca", "wavelet"]);
    let md = std::fs::read_to_string(root.join("cmp/compare.md")).unwrap();
    assert_eq!(md.lines().count(), 4);
    assert!(md.contains('%'));
}

#[test]
fn synth_seed_changes_images() {
    let tmp = tempfile::tempdir().unwrap();
    for (dir, seed) in [("s1", "1"), ("s1b", "1"), ("s2", "2")] {
        assert_eq!(
            code(&eigencoin(
                tmp.path(),
                &["synth", "--preset", "balanced-small", "--seed", seed, "--out", dir]
            )),
            0
        );
    }
    let read = |d: &str| std::fs::read(tmp.path().join(d).join("00_khosrow_i/0000.png")).unwrap();
    assert_eq!(read("s1"), read("s1b"));
    assert_ne!(read("s1"), read("s2"));
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("s2/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 2);
}
