mod common;

use std::io::Write;
use std::path::Path;
use std::process::{Command, Output};

use flate2::write::GzEncoder;
use flate2::Compression;
use serde_json::Value;

fn gramopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gramopt"))
        .args(args)
        .output()
        .expect("spawn gramopt")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

#[test]
fn missing_subcommand_is_usage_error() {
    assert_eq!(code(&gramopt(&[])), 2);
    assert_eq!(code(&gramopt(&["frobnicate"])), 2);
}

#[test]
fn help_exits_zero() {
    let out = gramopt(&["--help"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in [
        "simulate-instance",
        "simulate-system",
        "validate-theorems",
        "baseline",
        "analyze-corpus",
        "plot-data",
    ] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn unknown_preset_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = gramopt(&["simulate-instance", "--preset", "nope", "--out", &s(dir.path())]);
    assert_eq!(code(&out), 2);
}

#[test]
fn config_error_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(
        &cfg,
        r#"{"version": 1, "feature": {"name": "g", "labels": ["a", "b"], "marginal": [0.5, 0.5]},
            "optimizer": {"learning_rate": 0.01, "momentum": 0.9}}"#,
    )
    .unwrap();
    let out = gramopt(&[
        "simulate-instance",
        "--config",
        &s(&cfg),
        "--out",
        &s(&dir.path().join("o")),
    ]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("optimizer"), "{err}");
}

#[test]
fn invalid_marginal_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(
        &cfg,
        r#"{"version": 1, "feature": {"name": "g", "labels": ["a", "b"], "marginal": [0.5, 0.6]}}"#,
    )
    .unwrap();
    let out = gramopt(&[
        "simulate-instance",
        "--config",
        &s(&cfg),
        "--out",
        &s(&dir.path().join("o")),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn stage_seeds_need_three_values() {
    let dir = tempfile::tempdir().unwrap();
    let out = gramopt(&[
        "simulate-system",
        "--preset",
        "system-desk",
        "--stage-seeds",
        "1,2",
        "--out",
        &s(dir.path()),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn missing_corpus_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = gramopt(&[
        "analyze-corpus",
        "--conllu",
        &s(&dir.path().join("absent.conllu")),
        "--out",
        &s(&dir.path().join("o")),
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn malformed_corpus_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("bad.conllu");
    let mut text = common::english_fixture();
    for _ in 0..10 {
        text.push_str("not a token line\n");
    }
    std::fs::write(&corpus, text).unwrap();
    let out = gramopt(&[
        "analyze-corpus",
        "--conllu",
        &s(&corpus),
        "--out",
        &s(&dir.path().join("o")),
    ]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("malformed"));
}

#[test]
fn baseline_prints_verdict() {
    let out = gramopt(&["baseline", "--k", "2", "--d-obs", "0.0003", "--seed", "1"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains('‡'), "{text}");
}

#[test]
fn baseline_rejects_k_below_two() {
    assert_eq!(code(&gramopt(&["baseline", "--k", "1", "--d-obs", "0.1"])), 2);
}

#[test]
fn instance_run_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    for (out, seed) in [(&a, "0"), (&b, "0"), (&c, "5")] {
        let o = gramopt(&[
            "simulate-instance",
            "--preset",
            "gender",
            "--seeds",
            "2",
            "--rng-seed",
            seed,
            "--out",
            &s(out),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ma = read_json(&a.join("manifest.json"));
    let mb = read_json(&b.join("manifest.json"));
    let mc = read_json(&c.join("manifest.json"));
    let hash = ma["config_hash"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    assert!(hash.chars().all(|ch| ch.is_ascii_hexdigit()));
    assert_eq!(ma["config_hash"], mb["config_hash"]);
    assert_ne!(ma["config_hash"], mc["config_hash"]);
    assert_eq!(ma["subcommand"], "simulate-instance");
    assert!(ma["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .any(|p| p.as_str().unwrap().ends_with("instance.csv")));
    let csv = std::fs::read_to_string(a.join("instance.csv")).unwrap();
    assert!(csv.starts_with("alpha,seed,memory,surprisal"));
    assert_eq!(csv.lines().count(), 1 + 7 * 2);
}

#[test]
fn gzip_corpus_matches_plain() {
    let dir = tempfile::tempdir().unwrap();
    let text = common::spanish_fixture();
    let plain = dir.path().join("es.conllu");
    std::fs::write(&plain, &text).unwrap();
    let gz = dir.path().join("es.conllu.gz");
    let mut enc = GzEncoder::new(std::fs::File::create(&gz).unwrap(), Compression::default());
    enc.write_all(text.as_bytes()).unwrap();
    enc.finish().unwrap();

    let (po, go) = (dir.path().join("p"), dir.path().join("g"));
    for (input, out) in [(&plain, &po), (&gz, &go)] {
        let o = gramopt(&[
            "analyze-corpus",
            "--conllu",
            &s(input),
            "--language",
            "es",
            "--out",
            &s(out),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(
        std::fs::read(po.join("counts_all.csv")).unwrap(),
        std::fs::read(go.join("counts_all.csv")).unwrap()
    );
    let stats = read_json(&po.join("parse_stats.json"));
    assert_eq!(stats[0]["stats"]["sentences"], 200);
    assert_eq!(stats[0]["stats"]["malformed"], 0);
    let report = read_json(&po.join("report.json"));
    assert_eq!(report[0]["language"], "es");
}

#[test]
fn animate_subset_and_inventory() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("es.conllu");
    std::fs::write(&corpus, common::spanish_fixture()).unwrap();
    let animate = dir.path().join("animate.txt");
    std::fs::write(&animate, "gato\nperro\n").unwrap();
    let out = dir.path().join("o");
    let o = gramopt(&[
        "analyze-corpus",
        "--conllu",
        &s(&corpus),
        "--animate",
        &s(&animate),
        "--gender-inventory",
        "3",
        "--out",
        &s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&out.join("report.json"));
    assert_eq!(report[0]["gender"]["n_values"], 3);
    assert_eq!(report[0]["gender"]["d_kl"], "inf");
    assert!(out.join("counts_animate.csv").exists());
}

#[test]
fn plot_data_reads_reports() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("es.conllu");
    std::fs::write(&corpus, common::spanish_fixture()).unwrap();
    let out = dir.path().join("corpus");
    assert_eq!(
        code(&gramopt(&[
            "analyze-corpus",
            "--conllu",
            &s(&corpus),
            "--baseline-n",
            "100",
            "--out",
            &s(&out)
        ])),
        0
    );
    let plot = dir.path().join("plot");
    let o = gramopt(&[
        "plot-data",
        "--reports",
        &s(&out.join("report.json")),
        "--k-max",
        "3",
        "--baseline-n",
        "100",
        "--out",
        &s(&plot),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let bands = std::fs::read_to_string(plot.join("baseline_bands.csv")).unwrap();
    assert_eq!(bands.lines().count(), 1 + 2);
    assert!(plot.join("optimal_curve.csv").exists());
}
