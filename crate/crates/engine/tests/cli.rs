use std::path::Path;
use std::process::{Command, Output};

use semplan_engine::bench::Preset;
use serde_json::Value;

fn semplan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semplan"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "{e}\nstdout: {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

/// Drops every `timing` object so runs can be compared for equality.
fn without_timing(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.remove("timing");
            map.values_mut().for_each(without_timing);
        }
        Value::Array(items) => items.iter_mut().for_each(without_timing),
        _ => {}
    }
}

fn books_reviews_sql() -> String {
    Preset::builtin("fig1").unwrap().queries[0].sql.clone()
}

#[test]
fn compare_reproduces_the_books_reviews_counts() {
    let sql = books_reviews_sql();
    let out = semplan(&["--data", "preset:fig1", "--alpha", "1e-7", "compare", "--sql", &sql]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&out);
    let calls: Vec<u64> = report["strategies"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["llm_calls"].as_u64().unwrap())
        .collect();
    assert_eq!(calls[..2], [4000, 3300]);
    assert!(calls[2] <= 3300);
    for s in report["strategies"].as_array().unwrap() {
        assert_eq!(s["equal_to_first"], Value::Bool(true));
    }
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let bad_syntax = semplan(&["--data", "corpus", "parse", "--sql", "SELECT FROM WHERE"]);
    assert_eq!(code(&bad_syntax), 2);
    let stderr = String::from_utf8_lossy(&bad_syntax.stderr);
    assert!(stderr.contains("line 1"), "{stderr}");

    let unknown_table = semplan(&["--data", "corpus", "parse", "--sql", "SELECT x FROM nowhere"]);
    assert_eq!(code(&unknown_table), 3);

    assert_eq!(code(&semplan(&["frobnicate"])), 1);
    assert_eq!(
        code(&semplan(&[
            "--alpha", "-3", "--data", "corpus", "parse", "--sql", "SELECT 1"
        ])),
        1
    );
    assert_eq!(code(&semplan(&["--help"])), 0);
}

#[test]
fn compare_output_is_deterministic_apart_from_timing() {
    let sql = semplan_engine::corpus::QUERIES[0].1;
    let run = || {
        let out = semplan(&["--data", "corpus", "compare", "--sql", sql]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let mut v = json(&out);
        assert!(v["strategies"][0]["timing"].is_object());
        without_timing(&mut v);
        v
    };
    assert_eq!(run(), run());
}

#[test]
fn run_writes_result_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let sql = semplan_engine::corpus::QUERIES[0].1;
    let out = semplan(&[
        "--data",
        "corpus",
        "--out",
        out_dir.to_str().unwrap(),
        "run",
        "--sql",
        sql,
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let metrics: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["llm_calls"].as_u64().is_some());
    assert!(metrics["timing"]["optimize_ms"].as_f64().is_some());
    let csv = std::fs::read_to_string(out_dir.join("result.csv")).unwrap();
    assert_eq!(csv.lines().count() as u64, metrics["rows"].as_u64().unwrap() + 1);
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn generated_datasets_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = semplan(&["--out", d.to_str().unwrap(), "generate", "--workload", "preset:fig1"]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let (fa, fb) = (read_dir_bytes(&a), read_dir_bytes(&b));
    assert!(!fa.is_empty());
    assert_eq!(fa, fb);
}

#[test]
fn bench_summary_matches_its_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = semplan(&[
        "--out",
        dir.path().to_str().unwrap(),
        "bench",
        "--preset",
        "chain5",
        "--latency-ms",
        "0",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("chain5.summary.json")).unwrap()).unwrap();
    assert_eq!(json(&out), summary);

    // Recompute the per-strategy geometric mean of cost reduction from the rows.
    let mut reader = csv::Reader::from_path(dir.path().join("chain5.csv")).unwrap();
    let headers = reader.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (strategy, reduction, calls) = (col("strategy"), col("cost_reduction"), col("llm_calls"));
    let mut per: std::collections::BTreeMap<String, (f64, usize, u64)> = Default::default();
    for rec in reader.records() {
        let rec = rec.unwrap();
        let e = per.entry(rec[strategy].to_string()).or_default();
        e.0 += rec[reduction].parse::<f64>().unwrap().ln();
        e.1 += 1;
        e.2 += rec[calls].parse::<u64>().unwrap();
    }
    assert!(!per.is_empty());
    for (s, (log_sum, n, calls)) in per {
        let expected = (log_sum / n as f64).exp();
        let got = summary["strategies"][&s]["geomean_cost_reduction"].as_f64().unwrap();
        assert!(
            (expected - got).abs() <= 1e-9 * expected.max(1.0),
            "{s}: {expected} vs {got}"
        );
        assert_eq!(summary["strategies"][&s]["llm_calls"].as_u64().unwrap(), calls);
    }
}
