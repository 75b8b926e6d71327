use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SPEC: &str = r#"{
  "seed": 11,
  "n_visual": 16,
  "hidden_dim": 16,
  "vocab_size": 64,
  "layers": [2, 3],
  "var_layers": [1, 2, 3],
  "num_samples": 12,
  "mentions_per_sample": 1,
  "num_classes": 8,
  "mix": {"clean_real": 0.5, "clean_halluc": 0.5, "context_confound": 0.0, "lookalike_confound": 0.0},
  "alpha": 0.8,
  "sigma": 0.0
}"#;

fn glsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_glsim"))
        .args(args)
        .env_remove("GLSIM_BUNDLE")
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    /// Synthesizes a bundle and extracts labeled mentions.
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("spec.json"), SPEC).unwrap();
        let ws = Self { dir };
        let out = glsim(&[
            "synth",
            path(&ws.file("spec.json")),
            "-o",
            path(&ws.bundle()),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        let out = glsim(&[
            "extract-mentions",
            path(&ws.bundle()),
            "--lexicon",
            path(&ws.bundle().join("lexicon.json")),
            "-o",
            path(&ws.file("mentions.jsonl")),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        ws
    }

    fn file(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn bundle(&self) -> PathBuf {
        self.file("bundle")
    }

    fn score(&self, extra: &[&str], output: &str) -> Output {
        let (bundle, mentions, out) = (
            self.bundle(),
            self.file("mentions.jsonl"),
            self.file(output),
        );
        let mut args = vec![
            "score",
            path(&bundle),
            "--mentions",
            path(&mentions),
            "-o",
            path(&out),
        ];
        args.extend_from_slice(extra);
        glsim(&args)
    }
}

const FLAGS: &[&str] = &[
    "--layers",
    "3,2",
    "--k",
    "2",
    "--w",
    "0.6",
    "--svar-layers",
    "1,3",
];

#[test]
fn synthesized_bundle_validates() {
    let ws = Workspace::new();
    let out = glsim(&["validate", path(&ws.bundle())]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
}

#[test]
fn corrupted_bundle_fails_validation() {
    let ws = Workspace::new();
    let blob = ws.bundle().join("samples/s00000/tensors.bin");
    let mut bytes = fs::read(&blob).unwrap();
    let last = bytes.len() - 100;
    bytes[last] ^= 0x40;
    fs::write(&blob, bytes).unwrap();
    let out = glsim(&["validate", path(&ws.bundle())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn full_pipeline_separates_clean_synthetic_data() {
    let ws = Workspace::new();
    let mut flags = FLAGS.to_vec();
    flags.extend(["--method", "all"]);
    let out = ws.score(&flags, "scores.jsonl");
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let out = glsim(&[
        "evaluate",
        path(&ws.file("scores.jsonl")),
        "--calibrate-f1",
        "--histogram",
        path(&ws.file("hist")),
        "-o",
        path(&ws.file("report.json")),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ws.file("report.json")).unwrap()).unwrap();
    let groups = report["groups"].as_array().unwrap();
    assert_eq!(groups.len(), 8);
    let glsim_group = groups.iter().find(|g| g["method"] == "glsim").unwrap();
    assert_eq!(glsim_group["auroc"], 1.0);
    assert_eq!(glsim_group["f1_calibration"]["f1"], 1.0);
    assert!(fs::read_dir(ws.file("hist")).unwrap().count() >= 1);
}

#[test]
fn outputs_are_reproducible() {
    let ws = Workspace::new();
    assert!(ws.score(FLAGS, "a.jsonl").status.success());
    assert!(ws.score(FLAGS, "b.jsonl").status.success());
    assert_eq!(
        fs::read(ws.file("a.jsonl")).unwrap(),
        fs::read(ws.file("b.jsonl")).unwrap()
    );
    let mentions = fs::read(ws.file("mentions.jsonl")).unwrap();
    let out = glsim(&[
        "extract-mentions",
        path(&ws.bundle()),
        "--lexicon",
        path(&ws.bundle().join("lexicon.json")),
        "-o",
        path(&ws.file("again.jsonl")),
    ]);
    assert!(out.status.success());
    assert_eq!(fs::read(ws.file("again.jsonl")).unwrap(), mentions);
}

#[test]
fn k_beyond_patch_count_is_a_runtime_error() {
    let ws = Workspace::new();
    let out = ws.score(
        &["--layers", "3,2", "--k", "17", "--w", "0.6"],
        "scores.jsonl",
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("KOutOfRange"), "{}", stderr(&out));
}

#[test]
fn unknown_model_without_flags_is_a_usage_error() {
    let ws = Workspace::new();
    let out = ws.score(&[], "scores.jsonl");
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--layers"));
    assert_eq!(glsim(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn help_works_for_every_subcommand() {
    assert_eq!(glsim(&["--help"]).status.code(), Some(0));
    for sub in [
        "validate",
        "extract-mentions",
        "score",
        "evaluate",
        "sweep",
        "ground",
        "synth",
    ] {
        let out = glsim(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"));
    }
}

#[test]
fn sweep_writes_a_grid() {
    let ws = Workspace::new();
    let (bundle, mentions, out_path) =
        (ws.bundle(), ws.file("mentions.jsonl"), ws.file("sweep.csv"));
    let mut args = vec![
        "sweep",
        path(&bundle),
        "--mentions",
        path(&mentions),
        "--axis",
        "w=0:1:0.5",
        "-o",
    ];
    args.push(path(&out_path));
    args.extend_from_slice(FLAGS);
    let out = glsim(&args);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(
        fs::read_to_string(out_path).unwrap(),
        "w,0,0.5,1\nglsim,1,1,1\n"
    );
}

#[test]
fn ground_writes_map_mask_image_and_bounds() {
    let ws = Workspace::new();
    let mentions = fs::read_to_string(ws.file("mentions.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(mentions.lines().next().unwrap()).unwrap();
    let mut args = vec![
        "ground".to_string(),
        path(&ws.bundle()).to_string(),
        "--sample".into(),
        first["sample_id"].as_str().unwrap().into(),
        "--object".into(),
        first["canonical"].as_str().unwrap().into(),
        "--lexicon".into(),
        path(&ws.bundle().join("lexicon.json")).into(),
        "--mask".into(),
        path(&ws.file("mask.csv")).into(),
        "--pgm".into(),
        path(&ws.file("map.pgm")).into(),
        "-o".into(),
        path(&ws.file("map.csv")).into(),
    ];
    args.extend(FLAGS.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = glsim(&refs);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(
        fs::read_to_string(ws.file("map.csv"))
            .unwrap()
            .lines()
            .count(),
        4
    );
    let mask = fs::read_to_string(ws.file("mask.csv")).unwrap();
    assert_eq!(mask.matches('1').count(), 2);
    assert!(fs::read(ws.file("map.pgm"))
        .unwrap()
        .starts_with(b"P5\n4 4\n255\n"));
    let bounds: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ws.file("map.json")).unwrap()).unwrap();
    assert!(bounds["min"].as_f64().unwrap() < bounds["max"].as_f64().unwrap());
}

#[test]
fn bundle_path_can_come_from_the_environment() {
    let ws = Workspace::new();
    let out = Command::new(env!("CARGO_BIN_EXE_glsim"))
        .arg("validate")
        .env("GLSIM_BUNDLE", ws.bundle())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
}
