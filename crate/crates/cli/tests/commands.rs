use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ida_core::bundle::{read_bundle, write_bundle, Bundle};
use ida_core::synthetic::{generate_task, SyntheticSpec};
use ida_core::{ClassifierHead, FeatureVector};
use serde_json::Value;

fn ida(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ida")).args(args).output().unwrap()
}

fn ida_env(args: &[&str], key: &str, val: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ida")).args(args).env(key, val).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

fn imbalanced_spec(seed: u64) -> SyntheticSpec {
    let mut spec = SyntheticSpec::two_class(2, 1.0, [0.1, 0.9], seed);
    spec.shared_cov_scale = 0.25;
    spec.context_mix = 1.0;
    spec
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn stats_is_idempotent_and_matches_two_pass_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("b");
    let mut spec = SyntheticSpec::two_class(6, 3.0, [0.4, 0.6], 8);
    spec.n_demos = 1000;
    let bundle = generate_task(&spec).unwrap();
    write_bundle(&dir, &bundle).unwrap();

    let first = ida(&["stats", "--bundle", p(&dir)]);
    assert!(first.status.success(), "{}", stderr(&first));
    let after_first = dir_bytes(&dir);
    assert!(after_first.iter().any(|(n, _)| n == "stats_cov.f32"));
    let second = ida(&["stats", "--bundle", p(&dir)]);
    assert_eq!(second.status.code(), Some(0));
    assert_eq!(after_first, dir_bytes(&dir));
    assert_eq!(first.stdout, second.stdout);

    // Independent two-pass trace over the stored 32-bit demo features.
    let rows: Vec<&[f64]> = bundle.demo_features.iter().map(FeatureVector::as_slice).collect();
    let n = rows.len() as f64;
    let mut trace = 0.0;
    for i in 0..6 {
        let mean = rows.iter().map(|r| r[i]).sum::<f64>() / n;
        trace += rows.iter().map(|r| (r[i] - mean).powi(2)).sum::<f64>() / n;
    }
    let reported = json(&first)["trace"].as_f64().unwrap();
    assert!((reported - trace).abs() <= 1e-9 * trace, "{reported} vs {trace}");
    assert_eq!(json(&first)["count"], 1000);
    assert!(json(&first)["min_eigenvalue"].as_f64().unwrap() > 0.0);
}

fn zero_demo_bundle(dir: &Path) {
    let b = Bundle {
        label_names: vec!["a".into(), "b".into()],
        demo_features: vec![],
        query_features: vec![FeatureVector::new(vec![1.0, 0.0]).unwrap()],
        head: ClassifierHead::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0], vec![0, 1]).unwrap(),
        demo_labels: None,
        query_labels: None,
        stats: None,
    };
    write_bundle(dir, &b).unwrap();
}

#[test]
fn stats_without_demos_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    zero_demo_bundle(tmp.path());
    let out = ida(&["stats", "--bundle", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("empty input"), "{}", stderr(&out));
}

#[test]
fn predict_without_stats_or_demos_names_stats() {
    let tmp = tempfile::tempdir().unwrap();
    zero_demo_bundle(tmp.path());
    let out = ida(&["predict", "--bundle", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("stats"), "{}", stderr(&out));
}

#[test]
fn vanilla_flags_reproduce_argmax() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = imbalanced_spec(4);
    spec.extra_vocab = 20;
    spec.head_noise = 0.3;
    let bundle = generate_task(&spec).unwrap();
    write_bundle(tmp.path(), &bundle).unwrap();
    let out = ida(&["predict", "--bundle", p(tmp.path()), "--lambda", "0", "--tau", "0"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let lines: Vec<Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), bundle.query_features.len());
    for (q, rec) in lines.iter().enumerate() {
        assert_eq!(rec["query_id"], q);
        let logits = bundle.head.logits(bundle.query_features[q].as_slice());
        let cand: Vec<f64> = bundle.head.candidates().iter().map(|&k| logits[k]).collect();
        let argmax = if cand[1] > cand[0] { 1 } else { 0 };
        assert_eq!(rec["decision"], argmax, "query {q}");
        assert_eq!(rec["saturated"], false);
    }
}

#[test]
fn simulate_predict_eval_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let b = tmp.path().join("task");
    let sim = ida(&[
        "simulate", "--output", p(&b), "--dim", "2", "--separation", "1", "--cov-scale", "0.25",
        "--demo-priors", "0.1,0.9", "--context-mix", "1", "--seed", "3",
    ]);
    assert!(sim.status.success(), "{}", stderr(&sim));
    assert_eq!(json(&sim)["n_demos"], 40);

    let preds = tmp.path().join("p.jsonl");
    let out = ida(&["predict", "--bundle", p(&b), "--output", p(&preds)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(out.stdout.is_empty());

    let csv = tmp.path().join("c.csv");
    let ev = ida(&["eval", "--bundle", p(&b), "--predictions", p(&preds), "--confusion-csv", p(&csv)]);
    assert!(ev.status.success(), "{}", stderr(&ev));
    let report = json(&ev);
    assert_eq!(report["n"], 500);
    let csv = fs::read_to_string(csv).unwrap();
    assert!(csv.starts_with("truth\\pred,class_0,class_1\n"));
    let total: usize = csv
        .lines()
        .skip(1)
        .flat_map(|l| l.split(',').skip(1).map(|v| v.parse::<usize>().unwrap()).collect::<Vec<_>>())
        .sum();
    assert_eq!(total, 500);
}

#[test]
fn simulate_from_spec_file_matches_library() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = imbalanced_spec(12);
    let spec_path = tmp.path().join("spec.json");
    fs::write(&spec_path, serde_json::to_string(&spec).unwrap()).unwrap();
    let out_dir = tmp.path().join("b");
    let sim = ida(&["simulate", "--spec", p(&spec_path), "--output", p(&out_dir)]);
    assert!(sim.status.success(), "{}", stderr(&sim));
    assert_eq!(read_bundle(&out_dir).unwrap(), generate_task(&spec).unwrap());
}

#[test]
fn oracle_exact_at_lambda_zero_and_lenient_at_m_one() {
    let tmp = tempfile::tempdir().unwrap();
    write_bundle(tmp.path(), &generate_task(&imbalanced_spec(2)).unwrap()).unwrap();
    let exact = ida(&["oracle", "--bundle", p(tmp.path()), "--lambda", "0", "--m-samples", "1000", "--query", "0", "--query", "3"]);
    assert_eq!(exact.status.code(), Some(0), "{}", stderr(&exact));
    let report = json(&exact);
    for q in report["queries"].as_array().unwrap() {
        for c in q["candidates"].as_array().unwrap() {
            assert_eq!(c["z_gap"], 0.0);
            assert_eq!(c["stderr"], 0.0);
        }
    }
    let one = ida(&["oracle", "--bundle", p(tmp.path()), "--m-samples", "1"]);
    assert_eq!(one.status.code(), Some(0), "{}", stderr(&one));
    assert_eq!(json(&one)["passed"], true);

    let full = ida(&["oracle", "--bundle", p(tmp.path()), "--m-samples", "200000", "--seed", "9"]);
    assert_eq!(full.status.code(), Some(0), "{}", stderr(&full));
    let again = ida(&["oracle", "--bundle", p(tmp.path()), "--m-samples", "200000", "--seed", "9"]);
    assert_eq!(full.stdout, again.stdout);
    let serial = ida_env(&["oracle", "--bundle", p(tmp.path()), "--m-samples", "200000", "--seed", "9"], "IDA_THREADS", "1");
    assert_eq!(full.stdout, serial.stdout);
}

#[test]
fn oracle_rejects_bad_query_index() {
    let tmp = tempfile::tempdir().unwrap();
    write_bundle(tmp.path(), &generate_task(&imbalanced_spec(2)).unwrap()).unwrap();
    let out = ida(&["oracle", "--bundle", p(tmp.path()), "--query", "500"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn overflowing_scores_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let big = 1e38;
    let b = Bundle {
        label_names: vec!["a".into(), "b".into()],
        demo_features: vec![FeatureVector::new(vec![big, -big]).unwrap(), FeatureVector::new(vec![-big, big]).unwrap()],
        query_features: vec![FeatureVector::new(vec![1.0, 0.0]).unwrap()],
        head: ClassifierHead::from_rows(vec![vec![big, 0.0], vec![-big, 0.0]], vec![0.0, 0.0], vec![0, 1]).unwrap(),
        demo_labels: None,
        query_labels: None,
        stats: None,
    };
    write_bundle(tmp.path(), &b).unwrap();
    let out = ida(&["predict", "--bundle", p(tmp.path()), "--lambda", "1e200"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("non-finite"), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    write_bundle(tmp.path(), &generate_task(&imbalanced_spec(2)).unwrap()).unwrap();
    assert_eq!(ida(&["predict", "--bundle", p(tmp.path()), "--lambda", "nan"]).status.code(), Some(2));
    assert_eq!(ida(&["predict"]).status.code(), Some(2));
    assert_eq!(ida(&["predict", "--bundle", "/nonexistent/bundle"]).status.code(), Some(2));
    assert_eq!(ida_env(&["predict", "--bundle", p(tmp.path())], "IDA_THREADS", "zero").status.code(), Some(2));
    assert_eq!(ida(&["eval", "--bundle", p(tmp.path()), "--predictions", "/nonexistent.jsonl"]).status.code(), Some(2));
}

#[test]
fn bench_reports_medians() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = imbalanced_spec(1);
    spec.extra_vocab = 50;
    write_bundle(tmp.path(), &generate_task(&spec).unwrap()).unwrap();
    let out = ida(&["bench", "--bundle", p(tmp.path()), "--m-samples", "2000", "--reps", "20"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let r = json(&out);
    assert_eq!(r["reps"], 20);
    assert_eq!(r["vocab_size"], 52);
    let mc = &r["monte_carlo"];
    assert!(mc["min_us_per_query"].as_f64().unwrap() <= mc["median_us_per_query"].as_f64().unwrap());
    assert!(r["speedup"].as_f64().unwrap() > 1.0);
}
