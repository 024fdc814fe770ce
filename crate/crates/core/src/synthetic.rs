//! Self-contained classification tasks in feature space.
//!
//! Demonstrations are drawn class-conditionally `N(mean_c, scale·I)` with
//! class counts following `demo_priors`; queries are class-balanced and
//! carry their labels. Each query feature is `x + context_mix · μ_demo`,
//! where `μ_demo` is the demonstration mean: the context of an in-context
//! prompt leaks into the query representation, which is what makes
//! imbalanced demonstrations bias the plain classifier.
//!
//! The head has one token per class with weight row `mean_c + noise`, zero
//! biases, followed by `extra_vocab` distractor tokens.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bundle::{quantize, Bundle};
use crate::error::{Error, Result};
use crate::oracle::substream;
use crate::types::{ClassPriors, ClassifierHead, FeatureVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub num_classes: usize,
    /// `num_classes × dim`.
    pub class_means: Vec<Vec<f64>>,
    pub shared_cov_scale: f64,
    pub demo_priors: Vec<f64>,
    pub n_demos: usize,
    pub n_queries: usize,
    pub head_noise: f64,
    pub seed: u64,
    /// Weight of the demonstration mean mixed into every query feature.
    #[serde(default)]
    pub context_mix: f64,
    /// Distractor vocabulary rows beyond the class tokens, drawn `N(0, I/dim)`.
    #[serde(default)]
    pub extra_vocab: usize,
}

impl SyntheticSpec {
    /// Two classes at `±separation/2` along the first axis.
    pub fn two_class(dim: usize, separation: f64, demo_priors: [f64; 2], seed: u64) -> Self {
        let mut m0 = vec![0.0; dim];
        let mut m1 = vec![0.0; dim];
        m0[0] = -separation / 2.0;
        m1[0] = separation / 2.0;
        Self {
            dim,
            num_classes: 2,
            class_means: vec![m0, m1],
            shared_cov_scale: 1.0,
            demo_priors: demo_priors.to_vec(),
            n_demos: 40,
            n_queries: 500,
            head_noise: 0.0,
            seed,
            context_mix: 0.0,
            extra_vocab: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if self.num_classes < 2 {
            return bad("need at least two classes".into());
        }
        if self.class_means.len() != self.num_classes || self.class_means.iter().any(|m| m.len() != self.dim) {
            return bad(format!("class_means must be {}×{}", self.num_classes, self.dim));
        }
        if self.class_means.iter().flatten().any(|v| !v.is_finite()) {
            return bad("class_means must be finite".into());
        }
        if !(self.shared_cov_scale.is_finite() && self.shared_cov_scale > 0.0) {
            return bad("shared_cov_scale must be positive".into());
        }
        if !(self.head_noise.is_finite() && self.head_noise >= 0.0) {
            return bad("head_noise must be non-negative".into());
        }
        if !self.context_mix.is_finite() {
            return bad("context_mix must be finite".into());
        }
        if self.demo_priors.len() != self.num_classes {
            return bad("demo_priors needs one entry per class".into());
        }
        ClassPriors::new(self.demo_priors.clone()).map_err(|e| Error::InvalidSpec(format!("demo_priors: {e}")))?;
        if self.n_demos < self.num_classes {
            return bad("n_demos must be at least num_classes".into());
        }
        if self.n_queries == 0 {
            return bad("n_queries must be at least 1".into());
        }
        Ok(())
    }
}

/// Splits `n` into per-class counts proportional to `probs` by largest
/// remainder; ties go to the lower class index.
pub fn class_counts(probs: &[f64], n: usize) -> Vec<usize> {
    let exact: Vec<f64> = probs.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &c in order.iter().cycle().take(n.saturating_sub(assigned)) {
        counts[c] += 1;
    }
    counts
}

fn gaussian_row<R: Rng>(rng: &mut R, center: &[f64], sd: f64) -> Vec<f64> {
    center
        .iter()
        .map(|c| {
            let z: f64 = rng.sample(StandardNormal);
            c + sd * z
        })
        .collect()
}

fn into_features(mut rows: Vec<Vec<f64>>) -> Vec<FeatureVector> {
    rows.iter_mut().for_each(|r| quantize(r));
    rows.into_iter()
        .map(|r| FeatureVector::new(r).expect("finite by construction"))
        .collect()
}

/// Builds a bundle from the spec; identical specs give identical bundles.
/// All values are rounded to 32-bit precision so the in-memory bundle
/// equals what a write/read cycle produces.
pub fn generate_task(spec: &SyntheticSpec) -> Result<Bundle> {
    spec.validate()?;
    let d = spec.dim;
    let c = spec.num_classes;
    let sd = spec.shared_cov_scale.sqrt();

    let mut demo_rng = substream(spec.seed, 0);
    let mut query_rng = substream(spec.seed, 1);
    let mut head_rng = substream(spec.seed, 2);
    let mut shuffle_rng = substream(spec.seed, 3);

    let mut demos: Vec<(usize, Vec<f64>)> = Vec::with_capacity(spec.n_demos);
    for (class, &n) in class_counts(&spec.demo_priors, spec.n_demos).iter().enumerate() {
        for _ in 0..n {
            demos.push((class, gaussian_row(&mut demo_rng, &spec.class_means[class], sd)));
        }
    }
    demos.shuffle(&mut shuffle_rng);
    let (demo_labels, demo_rows): (Vec<usize>, Vec<Vec<f64>>) = demos.into_iter().unzip();
    let demo_features = into_features(demo_rows);

    let mut demo_mean = vec![0.0; d];
    for f in &demo_features {
        for (m, v) in demo_mean.iter_mut().zip(f.as_slice()) {
            *m += v;
        }
    }
    demo_mean.iter_mut().for_each(|m| *m /= spec.n_demos as f64);

    let uniform = vec![1.0 / c as f64; c];
    let mut queries: Vec<(usize, Vec<f64>)> = Vec::with_capacity(spec.n_queries);
    for (class, &n) in class_counts(&uniform, spec.n_queries).iter().enumerate() {
        for _ in 0..n {
            let mut row = gaussian_row(&mut query_rng, &spec.class_means[class], sd);
            for (r, m) in row.iter_mut().zip(&demo_mean) {
                *r += spec.context_mix * m;
            }
            queries.push((class, row));
        }
    }
    queries.shuffle(&mut shuffle_rng);
    let (query_labels, query_rows): (Vec<usize>, Vec<Vec<f64>>) = queries.into_iter().unzip();

    let mut weights = Vec::with_capacity((c + spec.extra_vocab) * d);
    for mean in &spec.class_means {
        weights.extend(gaussian_row(&mut head_rng, mean, spec.head_noise));
    }
    let distractor_sd = (1.0 / d as f64).sqrt();
    let zeros = vec![0.0; d];
    for _ in 0..spec.extra_vocab {
        weights.extend(gaussian_row(&mut head_rng, &zeros, distractor_sd));
    }
    quantize(&mut weights);
    let vocab = c + spec.extra_vocab;
    let head = ClassifierHead::new(weights, vec![0.0; vocab], (0..c).collect(), d)?;

    Ok(Bundle {
        label_names: (0..c).map(|i| format!("class_{i}")).collect(),
        demo_features,
        query_features: into_features(query_rows),
        head,
        demo_labels: Some(demo_labels),
        query_labels: Some(query_labels),
        stats: None,
    })
}

/// Class proportions of `labels`. Absent classes get the floor `1/(10N)`,
/// taken proportionally from the present classes so the total stays 1.
pub fn empirical_priors(labels: &[usize], num_classes: usize) -> Result<ClassPriors> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("no labels".into()));
    }
    if num_classes == 0 {
        return Err(Error::EmptyInput("no classes".into()));
    }
    let mut counts = vec![0usize; num_classes];
    for &l in labels {
        if l >= num_classes {
            return Err(Error::IndexOutOfRange {
                index: l,
                limit: num_classes,
            });
        }
        counts[l] += 1;
    }
    let n = labels.len() as f64;
    let floor = 1.0 / (10.0 * n);
    let absent = counts.iter().filter(|&&k| k == 0).count();
    let probs: Vec<f64> = if absent == 0 {
        counts.iter().map(|&k| k as f64 / n).collect()
    } else if (absent as f64) * floor < 1.0 {
        let keep = 1.0 - absent as f64 * floor;
        counts
            .iter()
            .map(|&k| if k == 0 { floor } else { k as f64 / n * keep })
            .collect()
    } else {
        // More absent classes than the floor budget allows: raise and renormalise.
        let raised: Vec<f64> = counts.iter().map(|&k| (k as f64 / n).max(floor)).collect();
        let total: f64 = raised.iter().sum();
        raised.iter().map(|p| p / total).collect()
    };
    ClassPriors::new(probs)
}
