//! End-to-end checks of the command-line surface: exit codes, byte-level
//! reproducibility, and agreement between CLI runs and direct library
//! calls.

use std::path::Path;
use std::process::{Command, Output};

fn sail(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sail"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write_small_gen_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("gen.json");
    std::fs::write(
        &path,
        r#"{"classes": 8, "videos_per_class": 3, "n_min": 16, "n_max": 32, "min_len": 4,
            "split_ratios": [2, 1, 1], "d_f": 8, "d_r": 8, "d_global": 8}"#,
    )
    .unwrap();
    path
}

const MICRO_MODEL: &str = r#"{"d_f": 8, "d_r": 8, "d_global": 8, "d_model": 8, "heads": 2,
    "layers": 1, "window": 3, "d_ff": 16, "epochs": 2, "batch_size": 8, "lr": 0.002}"#;

fn write_micro_model_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("model.json");
    std::fs::write(&path, MICRO_MODEL).unwrap();
    path
}

#[test]
fn synth_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let gen = write_small_gen_config(dir.path());
    for out in ["a", "b"] {
        let r = sail(
            &["synth", "--config", gen.to_str().unwrap(), "--seed", "7", "--out", out],
            dir.path(),
        );
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    for file in ["corpus.jsonl", "manifest.json", "synth.resolved.json"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
}

#[test]
fn full_pipeline_train_eval_predict_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let gen = write_small_gen_config(dir.path());
    let model_cfg = write_micro_model_config(dir.path());
    let r = sail(
        &["synth", "--config", gen.to_str().unwrap(), "--seed", "5", "--out", "bench"],
        dir.path(),
    );
    assert!(r.status.success());

    // two identical trainings produce byte-identical checkpoints
    for out in ["t1", "t2"] {
        let r = sail(
            &[
                "train",
                "--data",
                "bench/corpus.jsonl",
                "--config",
                model_cfg.to_str().unwrap(),
                "--seed",
                "11",
                "--out",
                out,
            ],
            dir.path(),
        );
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    let c1 = std::fs::read(dir.path().join("t1/checkpoint.ckpt")).unwrap();
    let c2 = std::fs::read(dir.path().join("t2/checkpoint.ckpt")).unwrap();
    assert_eq!(c1, c2, "checkpoints differ between identical training runs");

    // eval the checkpoint and rerun: identical report bytes
    for out in ["e1", "e2"] {
        let r = sail(
            &[
                "eval",
                "--data",
                "bench/corpus.jsonl",
                "--checkpoint",
                "t1/checkpoint.ckpt",
                "--out",
                out,
            ],
            dir.path(),
        );
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    let e1 = std::fs::read(dir.path().join("e1/eval.sail.test.json")).unwrap();
    let e2 = std::fs::read(dir.path().join("e2/eval.sail.test.json")).unwrap();
    assert_eq!(e1, e2);

    // predict one sample
    let first_id = {
        let corpus = std::fs::read_to_string(dir.path().join("bench/corpus.jsonl")).unwrap();
        let first: serde_json::Value = serde_json::from_str(corpus.lines().next().unwrap()).unwrap();
        first["id"].as_str().unwrap().to_string()
    };
    let r = sail(
        &[
            "predict",
            "--checkpoint",
            "t1/checkpoint.ckpt",
            "--data",
            "bench/corpus.jsonl",
            "--sample",
            &first_id,
            "--out",
            "p1",
        ],
        dir.path(),
    );
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let pred: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(format!("p1/predict.{first_id}.json"))).unwrap())
            .unwrap();
    let n = pred["n"].as_u64().unwrap();
    let s = pred["s"].as_u64().unwrap();
    let e = pred["e"].as_u64().unwrap();
    assert!(s >= 1 && s <= n && e >= 1 && e <= n);
    assert_eq!(pred["p_s"].as_array().unwrap().len() as u64, n);
}

#[test]
fn eval_random_matches_direct_library_call() {
    let dir = tempfile::tempdir().unwrap();
    let gen = write_small_gen_config(dir.path());
    sail(&["synth", "--config", gen.to_str().unwrap(), "--seed", "9", "--out", "bench"], dir.path());
    let r = sail(
        &[
            "eval",
            "--data",
            "bench/corpus.jsonl",
            "--baseline",
            "random",
            "--seed",
            "33",
            "--out",
            "ev",
        ],
        dir.path(),
    );
    assert!(r.status.success());
    let cli_report: sail_core::eval::EvalReport = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("ev/eval.random.test.json")).unwrap(),
    )
    .unwrap();

    let samples = sail_core::databench::io::read_corpus(&dir.path().join("bench/corpus.jsonl")).unwrap();
    let items: Vec<(usize, sail_core::eval::Segment)> = samples
        .iter()
        .filter(|s| s.split == sail_core::databench::SplitName::Test)
        .map(|s| (s.frame_count(), s.target))
        .collect();
    let direct =
        sail_core::eval::random_baseline(&items, 33, &sail_core::eval::DEFAULT_THRESHOLDS).unwrap();
    assert_eq!(cli_report, direct);
}

#[test]
fn gradcheck_passes_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let r = sail(&["gradcheck", "--seed", "7", "--out", "gc"], dir.path());
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let stderr = String::from_utf8_lossy(&r.stderr);
    assert!(stderr.contains("PASS"), "{stderr}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("gc/gradcheck.json")).unwrap())
            .unwrap();
    assert!(report["passed"].as_bool().unwrap());
    assert!(report["max_rel_err"].as_f64().unwrap() < 1e-4);
}

#[test]
fn distinct_exit_codes_per_failure_class() {
    let dir = tempfile::tempdir().unwrap();
    // missing file -> io error (3)
    let r = sail(&["train", "--data", "nope.jsonl", "--out", "x"], dir.path());
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stderr));

    // config violation (unknown key) -> 2
    std::fs::write(dir.path().join("bad.json"), r#"{"no_such_key": 1}"#).unwrap();
    let r = sail(
        &["synth", "--config", "bad.json", "--out", "x"],
        dir.path(),
    );
    assert_eq!(r.status.code(), Some(2), "{}", String::from_utf8_lossy(&r.stderr));

    // invalid config arithmetic -> 2
    let r = sail(&["synth", "--classes", "6", "--out", "x"], dir.path());
    assert_eq!(r.status.code(), Some(2));

    // corrupt corpus -> 4
    std::fs::write(dir.path().join("corrupt.jsonl"), "{\"id\": 1}\n").unwrap();
    let r = sail(&["train", "--data", "corrupt.jsonl", "--out", "x"], dir.path());
    assert_eq!(r.status.code(), Some(4), "{}", String::from_utf8_lossy(&r.stderr));

    // corrupt checkpoint magic -> 4
    let gen = write_small_gen_config(dir.path());
    sail(&["synth", "--config", gen.to_str().unwrap(), "--out", "bench"], dir.path());
    std::fs::write(dir.path().join("bad.ckpt"), b"NOTSAIL!xxxxyyyy").unwrap();
    let r = sail(
        &["eval", "--data", "bench/corpus.jsonl", "--checkpoint", "bad.ckpt", "--out", "x"],
        dir.path(),
    );
    assert_eq!(r.status.code(), Some(4), "{}", String::from_utf8_lossy(&r.stderr));

    // unknown flag -> clap's usage error (2)
    let r = sail(&["synth", "--definitely-not-a-flag"], dir.path());
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn sweep_single_layer_grid_runs() {
    let dir = tempfile::tempdir().unwrap();
    let gen = write_small_gen_config(dir.path());
    let model_cfg = write_micro_model_config(dir.path());
    sail(&["synth", "--config", gen.to_str().unwrap(), "--seed", "3", "--out", "bench"], dir.path());
    let r = sail(
        &[
            "sweep",
            "--data",
            "bench/corpus.jsonl",
            "--config",
            model_cfg.to_str().unwrap(),
            "--layers",
            "1..2",
            "--epochs",
            "1",
            "--out",
            "sw",
        ],
        dir.path(),
    );
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("sw/sweep.json")).unwrap()).unwrap();
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["label"], "layers=1");
    assert_eq!(rows[1]["label"], "layers=2");
    let table = std::fs::read_to_string(dir.path().join("sw/sweep.txt")).unwrap();
    assert!(table.contains("mIoU"));
    // both grid flags at once is a usage error
    let r = sail(
        &["sweep", "--data", "bench/corpus.jsonl", "--layers", "1..2", "--ablations", "--out", "x"],
        dir.path(),
    );
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn resolved_config_reproduces_the_run_without_flags() {
    let dir = tempfile::tempdir().unwrap();
    let gen = write_small_gen_config(dir.path());
    sail(
        &["synth", "--config", gen.to_str().unwrap(), "--seed", "21", "--out", "a"],
        dir.path(),
    );
    // rerun from the resolved config only, no --seed flag
    let r = sail(
        &["synth", "--config", "a/synth.resolved.json", "--out", "b"],
        dir.path(),
    );
    assert!(r.status.success());
    let a = std::fs::read(dir.path().join("a/corpus.jsonl")).unwrap();
    let b = std::fs::read(dir.path().join("b/corpus.jsonl")).unwrap();
    assert_eq!(a, b, "resolved config did not reproduce the corpus");
}
