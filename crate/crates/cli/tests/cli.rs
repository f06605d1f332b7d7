use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use curvescan::harness::SynthBenchOptions;
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_curvescan");

fn curvescan(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("CURVESCAN_BACKEND_URL")
        .env_remove("CURVESCAN_CACHE_DIR")
        .output()
        .unwrap()
}

fn curvescan_stdin(args: &[&str], input: &str) -> Output {
    use std::io::Write;
    use std::process::Stdio;
    let mut child = Command::new(BIN)
        .args(args)
        .env_remove("CURVESCAN_BACKEND_URL")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["schema_version"], "v1");
    v
}

fn write_dataset(dir: &Path, n_pairs: usize) -> String {
    let options = SynthBenchOptions {
        seed: 2,
        n_pairs,
        length: 60,
        ..SynthBenchOptions::default()
    };
    let dataset = options.human_dataset(&options.world().unwrap()).unwrap();
    let path = dir.join("human.jsonl");
    fs::write(&path, dataset.to_jsonl()).unwrap();
    path.display().to_string()
}

fn machine_like_passage() -> String {
    let options = SynthBenchOptions {
        seed: 0,
        ..SynthBenchOptions::default()
    };
    let world = options.world().unwrap();
    let source = world.model(curvescan::backend::SOURCE_MODEL).unwrap();
    source
        .sample_sequence("x", 80, &mut curvescan::seed::stream(1))
        .unwrap()
        .text
}

#[test]
fn detect_reports_score_and_verdict() {
    let text = machine_like_passage();
    let out = curvescan_stdin(
        &["detect", "--backend-url", "synthetic", "--k", "20", "--all-methods", "--json"],
        &text,
    );
    let v = json(&out);
    assert_eq!(v["n_words"], 80);
    assert_eq!(v["discrepancy"]["k"], 20);
    let normalized = v["normalized"].as_f64().unwrap();
    let expected = if normalized > 0.1 { "machine" } else { "human" };
    assert_eq!(v["verdict"], expected);
    for m in ["logp", "rank", "logrank", "entropy"] {
        assert!(v["baselines"][m].is_number(), "{m}");
    }
    assert_eq!(v["config"]["mask_spec"]["mask_rate"], 0.15);

    // same seed, same answer
    let again = json(&curvescan_stdin(
        &["detect", "--backend-url", "synthetic", "--k", "20", "--all-methods", "--json"],
        &text,
    ));
    assert_eq!(v, again);
}

#[test]
fn detect_uses_default_hyperparameters() {
    let out = curvescan_stdin(&["detect", "--backend-url", "synthetic", "--json"], &machine_like_passage());
    let v = json(&out);
    assert_eq!(v["discrepancy"]["k"], 100);
    assert_eq!(v["config"]["mask_spec"]["span_length"], 2);
    assert_eq!(v["epsilon"], 0.1);
}

#[test]
fn detect_exit_codes() {
    let out = curvescan_stdin(&["detect", "--backend-url", "synthetic"], "w01 w02 w03");
    assert_eq!(out.status.code(), Some(3));
    let out = curvescan_stdin(&["detect", "--backend-url", "nonsense"], "w01 w02 w03");
    assert_eq!(out.status.code(), Some(4));
    let out = curvescan_stdin(
        &["detect", "--backend-url", "http://127.0.0.1:9", "--retry-budget", "0"],
        &machine_like_passage(),
    );
    assert_eq!(out.status.code(), Some(2));
    let out = curvescan(&["detect"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn backend_url_can_come_from_the_environment() {
    let out = Command::new(BIN)
        .args(["detect", "--k", "5", "--json"])
        .env("CURVESCAN_BACKEND_URL", "synthetic:1")
        .stdin(fs::File::open(write_tmp(&machine_like_passage()).path()).unwrap())
        .output()
        .unwrap();
    assert_eq!(json(&out)["discrepancy"]["k"], 5);
}

fn write_tmp(text: &str) -> tempfile::NamedTempFile {
    let f = tempfile::NamedTempFile::new().unwrap();
    fs::write(f.path(), text).unwrap();
    f
}

#[test]
fn evaluate_writes_reproducible_files() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_dataset(tmp.path(), 8);
    let run = |out: &str| {
        let out_dir = tmp.path().join(out).display().to_string();
        let o = curvescan(&[
            "evaluate", "--backend-url", "synthetic:2", "--dataset", &data, "--out-dir", &out_dir,
            "--n-examples", "8", "--k", "8", "--min-words", "60", "--n-prompt-tokens", "10",
            "--methods", "all", "--json", "--length-bins",
        ]);
        json(&o)
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a["aggregate"], b["aggregate"]);
    assert_eq!(a["aggregate"].as_object().unwrap().len(), 5);
    assert_eq!(a["length_bins"].as_array().unwrap().len(), 3);
    for f in ["rows.jsonl", "aggregate.csv", "histograms.json", "length_bins.json"] {
        assert_eq!(
            fs::read(tmp.path().join("a").join(f)).unwrap(),
            fs::read(tmp.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    let provenance: Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("a/provenance.json")).unwrap()).unwrap();
    assert_eq!(provenance["schema_version"], "v1");
    assert_eq!(provenance["config"]["k"], 8);
}

#[test]
fn config_file_and_flags_merge() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_dataset(tmp.path(), 4);
    let cfg = tmp.path().join("config.json");
    fs::write(&cfg, r#"{"k": 6, "methods": ["logp", "detectgpt"], "n_examples": 4, "min_words": 60}"#).unwrap();
    let out_dir = tmp.path().join("out").display().to_string();
    let v = json(&curvescan(&[
        "evaluate", "--backend-url", "synthetic:2", "--dataset", &data, "--out-dir", &out_dir,
        "--config", cfg.to_str().unwrap(), "--k", "4", "--json",
    ]));
    assert_eq!(v["aggregate"].as_object().unwrap().len(), 2);
    let provenance: Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("out/provenance.json")).unwrap()).unwrap();
    assert_eq!(provenance["config"]["k"], 4);

    fs::write(&cfg, r#"{"k": 6, "typo_field": 1}"#).unwrap();
    let out = curvescan(&[
        "evaluate", "--backend-url", "synthetic:2", "--dataset", &data, "--out-dir", &out_dir,
        "--config", cfg.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn sweep_k_has_one_row_per_k() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_dataset(tmp.path(), 4);
    let out_dir = tmp.path().join("k").display().to_string();
    let out = curvescan(&[
        "sweep-k", "--backend-url", "synthetic:2", "--dataset", &data, "--out-dir", &out_dir,
        "--n-examples", "4", "--min-words", "60", "--k-values", "2,10,100",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("k/sweep_k.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(2).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[2].starts_with("100,"));
    assert_eq!(String::from_utf8(out.stdout).unwrap(), csv);
}

#[test]
fn sweep_paraphrase_and_cross_matrix_emit_json() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_dataset(tmp.path(), 4);
    let out_dir = tmp.path().join("p").display().to_string();
    let v = json(&curvescan(&[
        "sweep-paraphrase", "--backend-url", "synthetic:2", "--dataset", &data, "--out-dir", &out_dir,
        "--n-examples", "4", "--min-words", "60", "--k", "4", "--r-values", "0,0.2", "--json",
    ]));
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);

    let v = json(&curvescan(&[
        "cross-matrix", "--backend-url", "synthetic:2", "--dataset", &data, "--out-dir", &out_dir,
        "--n-examples", "4", "--min-words", "60", "--k", "4", "--sources", "synth-source,synth-a", "--json",
    ]));
    assert_eq!(v["matrix"]["cells"].as_array().unwrap().len(), 2);
    assert!(tmp.path().join("p/cross_matrix.csv").exists());
}

#[test]
fn curvature_check_flags() {
    let v = json(&curvescan(&["curvature-check", "--field", "quadratic", "--dim", "3", "--probes", "100", "--json"]));
    assert_eq!(v["truth"], -12.0);
    assert_eq!(v["z_score"], 0.0);
    assert_eq!(v["pass"], true);
    let out = curvescan(&["curvature-check", "--field", "cubic"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn synth_bench_small_sample_warns() {
    let out = curvescan(&["synth-bench", "--n-pairs", "2", "--k", "4", "--length", "30", "--json"]);
    let v = json(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    assert_eq!(v["report"]["warnings"].as_array().unwrap().len(), 1);
    assert_eq!(v["report"]["auroc"].as_object().unwrap().len(), 5);
}
