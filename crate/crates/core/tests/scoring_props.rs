use ida_core::scoring::{adjust_with_priors, decide, decide_with_priors, ida_log_score, ida_scores, log_softmax_prob};
use ida_core::stats::estimate_stats;
use ida_core::{ClassPriors, ClassifierHead, DemoStats, FeatureVector, IdaScorer, ScoreVector, ScoringOptions};
use proptest::prelude::*;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

struct Case {
    head: ClassifierHead,
    h: FeatureVector,
    stats: DemoStats,
}

fn normal(rng: &mut ChaCha20Rng, sd: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    sd * z
}

fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let d = rng.random_range(1..10);
    let vocab = rng.random_range(2..30);
    let n_cand = rng.random_range(2..=vocab.min(6));
    let w_sd = [0.1, 1.0, 4.0][rng.random_range(0..3)];
    let weights: Vec<f64> = (0..vocab * d).map(|_| normal(&mut rng, w_sd)).collect();
    let biases: Vec<f64> = (0..vocab).map(|_| normal(&mut rng, 2.0)).collect();
    let candidates = sample(&mut rng, vocab, n_cand).into_vec();
    let head = ClassifierHead::new(weights, biases, candidates, d).unwrap();
    let h = FeatureVector::new((0..d).map(|_| normal(&mut rng, 2.0)).collect()).unwrap();
    let n_demo = rng.random_range(1..40);
    let demos: Vec<FeatureVector> = (0..n_demo)
        .map(|_| FeatureVector::new((0..d).map(|_| normal(&mut rng, 1.0)).collect()).unwrap())
        .collect();
    Case {
        head,
        h,
        stats: estimate_stats(&demos).unwrap(),
    }
}

/// Direct evaluation of the closed form, one token at a time.
fn naive_score(head: &ClassifierHead, h: &[f64], stats: &DemoStats, lambda: f64, y: usize) -> f64 {
    let d = head.dim();
    let terms: Vec<f64> = (0..head.vocab_size())
        .map(|k| {
            let dw: Vec<f64> = (0..d).map(|i| head.row(k)[i] - head.row(y)[i]).collect();
            let db = head.biases()[k] - head.biases()[y];
            let mut quad = 0.0;
            for i in 0..d {
                for j in 0..d {
                    quad += dw[i] * stats.cov_at(i, j) * dw[j];
                }
            }
            let lin: f64 = (0..d).map(|i| dw[i] * (lambda * stats.mean()[i] + h[i])).sum();
            lin + 0.5 * lambda * quad + db
        })
        .collect();
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[test]
fn matches_direct_evaluation() {
    for seed in 0..300 {
        let c = random_case(seed);
        let lambda = (seed % 7) as f64 * 0.25;
        let scores = ida_scores(&c.head, &c.h, &c.stats, lambda, ScoringOptions::default()).unwrap();
        for (j, &y) in c.head.candidates().iter().enumerate() {
            let expect = naive_score(&c.head, c.h.as_slice(), &c.stats, lambda, y);
            let got = scores.log_scores()[j];
            assert!((got - expect).abs() <= 1e-9 * expect.abs().max(1.0), "seed {seed}: {got} vs {expect}");
        }
    }
}

#[test]
fn reduction_and_vanilla_decision() {
    for seed in 0..1000 {
        let c = random_case(seed);
        let scores = ida_scores(&c.head, &c.h, &c.stats, 0.0, ScoringOptions::default()).unwrap();
        let vanilla: Vec<f64> = c
            .head
            .candidates()
            .iter()
            .map(|&y| log_softmax_prob(&c.head, &c.h, y).unwrap())
            .collect();
        for (s, v) in scores.log_scores().iter().zip(&vanilla) {
            assert!((s + v).abs() < 1e-9, "seed {seed}");
            assert!(*s >= -1e-12);
        }
        let pred = decide_with_priors(&scores, &ClassPriors::uniform(vanilla.len()).unwrap(), 0.0).unwrap();
        assert_eq!(pred.decision, argmax(&vanilla), "seed {seed}");
        assert_eq!(decide(&scores).unwrap().candidate_index, argmax(&vanilla));
    }
}

#[test]
fn restricted_sum_keeps_reduction() {
    for seed in 0..200 {
        let c = random_case(seed);
        let opts = ScoringOptions {
            restrict_candidates: true,
            ..Default::default()
        };
        let scores = ida_scores(&c.head, &c.h, &c.stats, 0.0, opts).unwrap();
        let logits = c.head.logits(c.h.as_slice());
        let cand: Vec<f64> = c.head.candidates().iter().map(|&k| logits[k]).collect();
        let lse = cand.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = lse + cand.iter().map(|z| (z - lse).exp()).sum::<f64>().ln();
        for (s, z) in scores.log_scores().iter().zip(&cand) {
            assert!((s - (lse - z)).abs() < 1e-9);
        }
    }
}

#[test]
fn zero_covariance_zero_mean_equals_lambda_zero() {
    for seed in 0..100 {
        let c = random_case(seed);
        let d = c.head.dim();
        let flat = DemoStats::new(vec![0.0; d], vec![0.0; d * d], 3).unwrap();
        let a = ida_scores(&c.head, &c.h, &flat, 0.75, ScoringOptions::default()).unwrap();
        let b = ida_scores(&c.head, &c.h, &c.stats, 0.0, ScoringOptions::default()).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn diagonal_option_uses_only_variances() {
    for seed in 0..50 {
        let c = random_case(seed);
        let d = c.head.dim();
        let mut diag = vec![0.0; d * d];
        for i in 0..d {
            diag[i * d + i] = c.stats.cov_at(i, i);
        }
        let diag_stats = DemoStats::new(c.stats.mean().to_vec(), diag, c.stats.count()).unwrap();
        let opts = ScoringOptions {
            diagonal_cov: true,
            ..Default::default()
        };
        let a = ida_scores(&c.head, &c.h, &c.stats, 0.5, opts).unwrap();
        let b = ida_scores(&c.head, &c.h, &diag_stats, 0.5, ScoringOptions::default()).unwrap();
        for (x, y) in a.log_scores().iter().zip(b.log_scores()) {
            assert!((x - y).abs() <= 1e-10 * y.abs().max(1.0));
        }
    }
}

#[test]
fn scorer_reuse_matches_one_shot() {
    let c = random_case(42);
    let scorer = IdaScorer::new(&c.head, &c.stats, 0.5, ScoringOptions::default()).unwrap();
    for j in 0..c.head.num_candidates() {
        let one = ida_log_score(&c.head, &c.h, &c.stats, 0.5, j, ScoringOptions::default()).unwrap();
        assert_eq!(scorer.log_score(&c.h, j).unwrap(), one);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn lower_bound(seed in any::<u64>(), lambda in 0.0f64..3.0) {
        let c = random_case(seed);
        let s = ida_scores(&c.head, &c.h, &c.stats, lambda, ScoringOptions::default()).unwrap();
        prop_assert!(s.log_scores().iter().all(|&v| v >= -1e-12));
    }

    #[test]
    fn head_shift_invariance(seed in any::<u64>(), shift in -5.0f64..5.0, vseed in any::<u64>()) {
        let c = random_case(seed);
        let d = c.head.dim();
        let mut rng = ChaCha20Rng::seed_from_u64(vseed);
        let v: Vec<f64> = (0..d).map(|_| normal(&mut rng, 3.0)).collect();
        let weights: Vec<f64> = c.head.weights().iter().enumerate().map(|(i, w)| w + v[i % d]).collect();
        let biases: Vec<f64> = c.head.biases().iter().map(|b| b + shift).collect();
        let moved = ClassifierHead::new(weights, biases, c.head.candidates().to_vec(), d).unwrap();
        let a = ida_scores(&c.head, &c.h, &c.stats, 0.5, ScoringOptions::default()).unwrap();
        let b = ida_scores(&moved, &c.h, &c.stats, 0.5, ScoringOptions::default()).unwrap();
        for (x, y) in a.log_scores().iter().zip(b.log_scores()) {
            prop_assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0), "{} vs {}", x, y);
        }
    }

    #[test]
    fn covariance_monotone(seed in any::<u64>(), dseed in any::<u64>()) {
        let c = random_case(seed);
        let d = c.head.dim();
        let mut rng = ChaCha20Rng::seed_from_u64(dseed);
        // D = A Aᵀ is PSD.
        let a: Vec<f64> = (0..d * d).map(|_| normal(&mut rng, 0.5)).collect();
        let mut cov = c.stats.cov().to_vec();
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += (0..d).map(|k| a[i * d + k] * a[j * d + k]).sum::<f64>();
            }
        }
        let bigger = DemoStats::new(c.stats.mean().to_vec(), cov, c.stats.count()).unwrap();
        let lo = ida_scores(&c.head, &c.h, &c.stats, 0.5, ScoringOptions::default()).unwrap();
        let hi = ida_scores(&c.head, &c.h, &bigger, 0.5, ScoringOptions::default()).unwrap();
        for (x, y) in lo.log_scores().iter().zip(hi.log_scores()) {
            prop_assert!(*y >= x - 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn uniform_priors_keep_decision(raw in prop::collection::vec(0.0f64..50.0, 2..8), tau in 0.0f64..1.0) {
        // Linear scores ≥ 3 exceed τ·log K (K ≤ 8, τ < 1), so every adjusted value stays positive.
        let scores = ScoreVector::new(raw.iter().map(|s| s + 3f64.ln()).collect()).unwrap();
        let priors = ClassPriors::uniform(raw.len()).unwrap();
        let adjusted = adjust_with_priors(&scores, &priors, tau).unwrap();
        prop_assert_eq!(decide(&adjusted.scores).unwrap().candidate_index, decide(&scores).unwrap().candidate_index);
    }

    #[test]
    fn prior_monotone(raw in prop::collection::vec(0.0f64..5.0, 2..6), pick in 0usize..6, shrink in 0.05f64..0.95, tau in 0.01f64..2.0) {
        let k = raw.len();
        let j = pick % k;
        let scores = ScoreVector::new(raw).unwrap();
        let base = ClassPriors::uniform(k).unwrap();
        // Lower π_j, spreading the mass over the others.
        let mut p = base.probs().to_vec();
        let removed = p[j] * (1.0 - shrink);
        for (i, v) in p.iter_mut().enumerate() {
            if i == j { *v -= removed } else { *v += removed / (k - 1) as f64 }
        }
        let total: f64 = p.iter().sum();
        let p: Vec<f64> = p.iter().map(|v| v / total).collect();
        let lowered = ClassPriors::new(p).unwrap();
        let before = decide_with_priors(&scores, &base, tau).unwrap();
        let after = decide_with_priors(&scores, &lowered, tau).unwrap();
        // Linear adjusted value of j can only go down.
        let lin = |s: f64, pj: f64| s.exp() + tau * pj.ln();
        prop_assert!(lin(scores.log_scores()[j], lowered.probs()[j]) <= lin(scores.log_scores()[j], base.probs()[j]));
        if before.decision == j {
            prop_assert_eq!(after.decision, j);
        }
    }
}
