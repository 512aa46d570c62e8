//! End-to-end tests of the `tstok` binary: every subcommand is exercised
//! through its real process boundary, checking outputs, manifests, and exit
//! codes rather than library internals.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn tstok() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tstok"))
}

/// Runs the binary with `args`, asserting success, and returns its output.
fn run_ok(args: &[&str]) -> Output {
    let out = tstok().args(args).output().expect("spawning tstok");
    assert!(
        out.status.success(),
        "tstok {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read_bytes(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&read_bytes(path))
        .unwrap_or_else(|e| panic!("parsing {}: {e}", path.display()))
}

fn jsonl_lines(path: &Path) -> Vec<Value> {
    String::from_utf8(read_bytes(path))
        .expect("utf-8 jsonl")
        .lines()
        .map(|l| serde_json::from_str(l).expect("jsonl line"))
        .collect()
}

/// Generates a small corpus into `dir` and returns the corpus path.
fn synth_small(dir: &Path, seed: u64) -> std::path::PathBuf {
    let out = dir.join("synth");
    run_ok(&[
        "synth",
        "--n",
        "12",
        "--seed",
        &seed.to_string(),
        "--out",
        out.to_str().unwrap(),
    ]);
    out.join("corpus.jsonl")
}

#[test]
fn synth_reruns_and_manifest_replays_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    run_ok(&["synth", "--n", "12", "--seed", "7", "--out", a.to_str().unwrap()]);
    run_ok(&["synth", "--n", "12", "--seed", "7", "--out", b.to_str().unwrap()]);
    assert_eq!(
        read_bytes(&a.join("corpus.jsonl")),
        read_bytes(&b.join("corpus.jsonl")),
        "same seed must give a byte-identical corpus"
    );
    assert_eq!(read_bytes(&a.join("manifest.json")), read_bytes(&b.join("manifest.json")));

    // A manifest doubles as a config file: replaying it reproduces the run.
    run_ok(&[
        "synth",
        "--config",
        a.join("manifest.json").to_str().unwrap(),
        "--out",
        c.to_str().unwrap(),
    ]);
    assert_eq!(read_bytes(&a.join("corpus.jsonl")), read_bytes(&c.join("corpus.jsonl")));
}

#[test]
fn tstok_out_env_var_sets_the_default_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let out = tstok()
        .args(["synth", "--n", "6", "--seed", "1"])
        .env("TSTOK_OUT", dir.path())
        .output()
        .expect("spawning tstok");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("synth/corpus.jsonl").is_file());
    assert!(dir.path().join("synth/manifest.json").is_file());
}

#[test]
fn train_encode_decode_round_trips_series_ids_and_lengths() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_small(dir.path(), 3);

    let train_dir = dir.path().join("train");
    run_ok(&[
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--epochs",
        "1",
        "--out",
        train_dir.to_str().unwrap(),
    ]);
    let model = train_dir.join("model.ckpt");
    assert!(model.is_file());
    let report = read_json(&train_dir.join("fit_report.json"));
    assert!(report["final_val_mse"].as_f64().unwrap().is_finite());
    let metrics = fs::read_to_string(train_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2, "header plus one epoch row:\n{metrics}");

    let enc_dir = dir.path().join("enc");
    run_ok(&[
        "encode",
        "--model",
        model.to_str().unwrap(),
        "--input",
        corpus.to_str().unwrap(),
        "--out",
        enc_dir.to_str().unwrap(),
    ]);
    let streams = jsonl_lines(&enc_dir.join("streams.jsonl"));
    assert_eq!(streams.len(), 12);

    let dec_dir = dir.path().join("dec");
    run_ok(&[
        "decode",
        "--model",
        model.to_str().unwrap(),
        "--input",
        enc_dir.join("streams.jsonl").to_str().unwrap(),
        "--out",
        dec_dir.to_str().unwrap(),
    ]);
    let originals = jsonl_lines(&corpus);
    let decoded = jsonl_lines(&dec_dir.join("decoded.jsonl"));
    assert_eq!(decoded.len(), originals.len());
    for (orig, dec) in originals.iter().zip(&decoded) {
        assert_eq!(orig["id"], dec["id"], "decode must preserve series ids and order");
        let orig_values = orig["values"].as_array().unwrap();
        let dec_values = dec["values"].as_array().unwrap();
        assert_eq!(orig_values.len(), dec_values.len(), "padding must be trimmed");
        for v in dec_values {
            assert!(v.as_f64().unwrap().is_finite());
        }
    }
}

#[test]
fn eval_recon_on_an_untrained_checkpoint_reports_large_finite_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_small(dir.path(), 11);

    // Zero epochs still initializes the codebooks and writes a checkpoint:
    // the evaluable "untrained baseline" model.
    let train_dir = dir.path().join("t0");
    run_ok(&[
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--epochs",
        "0",
        "--out",
        train_dir.to_str().unwrap(),
    ]);

    let er_dir = dir.path().join("er");
    run_ok(&[
        "eval-recon",
        "--model",
        train_dir.join("model.ckpt").to_str().unwrap(),
        "--input",
        corpus.to_str().unwrap(),
        "--out",
        er_dir.to_str().unwrap(),
    ]);
    let summary = read_json(&er_dir.join("summary.json"));
    let mse = summary["mean_scaled_mse"].as_f64().unwrap();
    assert!(mse.is_finite() && mse > 0.05, "untrained error should be large, got {mse}");
    assert_eq!(jsonl_lines(&er_dir.join("per_series.jsonl")).len(), 12);
}

#[test]
fn score_grades_mcq_completions_against_a_flag_target() {
    let dir = tempfile::tempdir().unwrap();
    let completions = dir.path().join("completions.jsonl");
    fs::write(
        &completions,
        concat!(
            r#"{"id":"hit","text":"<think>ST depression in V5-V6, II, III.</think>"#,
            r#"<answer>(36) subendocardial injury in inferolateral leads</answer>"}"#,
            "\n",
            r#"{"id":"miss","text":"<think>looks anterior</think><answer>anterior MI</answer>"}"#,
            "\n",
        ),
    )
    .unwrap();

    let score_dir = dir.path().join("score");
    run_ok(&[
        "score",
        "--input",
        completions.to_str().unwrap(),
        "--task",
        "mcq",
        "--target",
        "subendocardial injury in inferolateral leads",
        "--out",
        score_dir.to_str().unwrap(),
    ]);
    let rows = jsonl_lines(&score_dir.join("scores.jsonl"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["correctness"].as_f64(), Some(1.0), "{:?}", rows[0]);
    assert_eq!(rows[0]["format_score"].as_f64(), Some(1.0));
    assert_eq!(rows[1]["correctness"].as_f64(), Some(0.0), "{:?}", rows[1]);
}

#[test]
fn exit_codes_distinguish_usage_errors_from_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();

    // Unknown flag: usage error, exit 2, usage text on stderr.
    let out = tstok().args(["synth", "--bogus-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    // Missing subcommand: also a usage error.
    let out = tstok().output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Missing input file: runtime failure, exit 1.
    let out = tstok()
        .args([
            "train",
            "--corpus",
            dir.path().join("nope.jsonl").to_str().unwrap(),
            "--out",
            dir.path().join("t").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn train_replayed_from_its_manifest_reproduces_artifacts_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_small(dir.path(), 5);

    let r1 = dir.path().join("r1");
    run_ok(&[
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--epochs",
        "2",
        "--out",
        r1.to_str().unwrap(),
    ]);
    let r2 = dir.path().join("r2");
    run_ok(&[
        "train",
        "--config",
        r1.join("manifest.json").to_str().unwrap(),
        "--out",
        r2.to_str().unwrap(),
    ]);
    for artifact in ["metrics.csv", "fit_report.json", "checkpoint_last.ckpt", "model.ckpt", "manifest.json"] {
        assert_eq!(
            read_bytes(&r1.join(artifact)),
            read_bytes(&r2.join(artifact)),
            "{artifact} must be byte-identical on replay"
        );
    }
}
