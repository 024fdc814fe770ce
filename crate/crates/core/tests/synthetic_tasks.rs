use ida_core::bundle::write_bundle;
use ida_core::scoring::{decide_with_priors, IdaScorer};
use ida_core::synthetic::{class_counts, empirical_priors, generate_task, SyntheticSpec};
use ida_core::{evaluate, ClassPriors, ScoringOptions};
use ida_core::stats::estimate_stats;
use proptest::prelude::*;
use std::fs;

/// Nearest class mean by Euclidean distance, straight from the spec.
fn nearest_mean(spec: &SyntheticSpec, x: &[f64]) -> usize {
    let dist = |m: &Vec<f64>| m.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let mut best = 0;
    for c in 1..spec.num_classes {
        if dist(&spec.class_means[c]) < dist(&spec.class_means[best]) {
            best = c;
        }
    }
    best
}

#[test]
fn separated_task_vanilla_accuracy_matches_nearest_mean() {
    let spec = SyntheticSpec::two_class(2, 6.0, [0.5, 0.5], 21);
    let bundle = generate_task(&spec).unwrap();
    let stats = estimate_stats(&bundle.demo_features).unwrap();
    let scorer = IdaScorer::new(&bundle.head, &stats, 0.0, ScoringOptions::default()).unwrap();
    let priors = ClassPriors::uniform(2).unwrap();
    let preds: Vec<usize> = bundle
        .query_features
        .iter()
        .map(|h| decide_with_priors(&scorer.scores(h).unwrap(), &priors, 0.0).unwrap().decision)
        .collect();
    let truths = bundle.query_labels.clone().unwrap();
    let acc = evaluate(&preds, &truths, 2).unwrap().accuracy;
    assert!(acc > 0.95, "vanilla accuracy {acc}");
    // Symmetric means with equal-norm head rows: the linear rule is the
    // nearest-mean rule, so the two must agree query by query.
    let nm: Vec<usize> = bundle.query_features.iter().map(|h| nearest_mean(&spec, h.as_slice())).collect();
    assert_eq!(preds, nm);
}

#[test]
fn same_spec_same_bytes() {
    let mut spec = SyntheticSpec::two_class(4, 2.0, [0.3, 0.7], 5);
    spec.head_noise = 0.1;
    spec.extra_vocab = 7;
    spec.context_mix = 0.5;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_bundle(a.path(), &generate_task(&spec).unwrap()).unwrap();
    write_bundle(b.path(), &generate_task(&spec).unwrap()).unwrap();
    let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 7);
    for n in names {
        assert_eq!(fs::read(a.path().join(&n)).unwrap(), fs::read(b.path().join(&n)).unwrap(), "{n:?}");
    }
    spec.seed = 6;
    assert_ne!(generate_task(&spec).unwrap().demo_features, generate_task(&SyntheticSpec { seed: 5, ..spec.clone() }).unwrap().demo_features);
}

#[test]
fn spec_loads_from_json() {
    let json = r#"{"dim": 2, "num_classes": 2, "class_means": [[-1, 0], [1, 0]],
        "shared_cov_scale": 0.5, "demo_priors": [0.25, 0.75], "n_demos": 8,
        "n_queries": 10, "head_noise": 0.0, "seed": 3}"#;
    let spec: SyntheticSpec = serde_json::from_str(json).unwrap();
    assert_eq!(spec.context_mix, 0.0);
    let b = generate_task(&spec).unwrap();
    assert_eq!(b.demo_features.len(), 8);
    assert_eq!(b.head.vocab_size(), 2);
}

proptest! {
    #[test]
    fn counts_sum_and_stay_close(raw in prop::collection::vec(0.01f64..1.0, 2..7), n in 0usize..500) {
        let total: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|p| p / total).collect();
        let counts = class_counts(&probs, n);
        prop_assert_eq!(counts.iter().sum::<usize>(), n);
        for (c, p) in counts.iter().zip(&probs) {
            prop_assert!((*c as f64 - n as f64 * p).abs() < 1.0);
        }
    }

    #[test]
    fn empirical_priors_always_valid(labels in prop::collection::vec(0usize..5, 1..40), extra in 0usize..30) {
        let k = 5 + extra;
        let p = empirical_priors(&labels, k).unwrap();
        prop_assert!(p.probs().iter().all(|&v| v > 0.0));
        prop_assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
