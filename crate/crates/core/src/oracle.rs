//! Explicit Monte-Carlo demonstration augmentation.
//!
//! Draws `h̃ ~ N(h + λμ, λΣ)` and averages the inverse softmax probability
//! of each candidate over the draws. This is the ground truth the closed
//! form must match in expectation; it deliberately goes through full
//! logits and softmax rather than the per-pair differences the closed form
//! uses.
//!
//! Sampling is split into fixed-size chunks. Chunk `c` draws from the
//! ChaCha8 stream `c` under the run seed, and chunk results are combined in
//! chunk order, so reports are bit-identical for any thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, CompensatedSum};
use crate::scoring::ScoringOptions;
use crate::stats::regularize;
use crate::types::{ClassifierHead, DemoStats, FeatureVector, ScoreVector};

/// Samples per RNG substream.
pub const CHUNK_SAMPLES: usize = 8192;

/// Ridge schedule for the sampler's factorization: 1e-9, 1e-8, ..., 1e-3.
const RIDGE_START: f64 = 1e-9;
const RIDGE_MAX: f64 = 1e-3;

/// Independent generator for `(seed, stream)`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a run seed with an index (SplitMix64 finaliser), e.g. to give each
/// query of a batch its own oracle seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_133f_11eb);
    z ^ (z >> 31)
}

/// Draws augmented features `h + λμ + √λ L z` with `L Lᵀ = Σ`.
#[derive(Debug, Clone)]
pub struct AugmentationSampler {
    shift: Vec<f64>,
    /// `√λ L`, absent when λ = 0.
    scaled_factor: Option<Vec<f64>>,
    ridge: f64,
}

impl AugmentationSampler {
    pub fn new(stats: &DemoStats, lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidValue {
                field: "lambda",
                reason: format!("{lambda} is not a non-negative real"),
            });
        }
        let shift: Vec<f64> = stats.mean().iter().map(|m| lambda * m).collect();
        if lambda == 0.0 {
            return Ok(Self {
                shift,
                scaled_factor: None,
                ridge: 0.0,
            });
        }
        let d = stats.dim();
        let mut eps = RIDGE_START;
        loop {
            let reg = regularize(stats, eps);
            let tol = linalg::pivot_tolerance(reg.cov(), d);
            if let Some(mut l) = linalg::semidefinite_cholesky(reg.cov(), d, tol) {
                let s = lambda.sqrt();
                l.iter_mut().for_each(|v| *v *= s);
                return Ok(Self {
                    shift,
                    scaled_factor: Some(l),
                    ridge: eps,
                });
            }
            eps *= 10.0;
            if eps > RIDGE_MAX * 1.000_001 {
                return Err(Error::FactorizationFailure { max_ridge: RIDGE_MAX });
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    /// Ridge `eps` that made the covariance factorable.
    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn is_degenerate(&self) -> bool {
        self.scaled_factor.is_none()
    }

    /// Center of the augmented distribution, `h + λμ`.
    fn center_into(&self, h: &[f64], out: &mut [f64]) {
        for ((o, x), s) in out.iter_mut().zip(h).zip(&self.shift) {
            *o = x + s;
        }
    }

    fn sample_into<R: Rng + ?Sized>(&self, h: &[f64], rng: &mut R, z: &mut [f64], out: &mut [f64]) {
        match &self.scaled_factor {
            None => out.copy_from_slice(h),
            Some(l) => {
                for zi in z.iter_mut() {
                    *zi = rng.sample(StandardNormal);
                }
                self.center_into(h, out);
                let d = z.len();
                for i in 0..d {
                    out[i] += linalg::dot(&l[i * d..i * d + i + 1], &z[..=i]);
                }
            }
        }
    }

    /// One augmented feature. With λ = 0 the RNG is not touched.
    pub fn sample<R: Rng + ?Sized>(&self, h: &FeatureVector, rng: &mut R) -> Result<FeatureVector> {
        h.expect_dim(self.dim())?;
        let d = self.dim();
        let mut z = vec![0.0; d];
        let mut out = vec![0.0; d];
        self.sample_into(h.as_slice(), rng, &mut z, &mut out);
        FeatureVector::new(out)
    }
}

/// One draw from `N(h + λμ, λΣ)` after ridge-regularizing Σ.
pub fn sample_augmented<R: Rng + ?Sized>(
    h: &FeatureVector,
    stats: &DemoStats,
    lambda: f64,
    rng: &mut R,
) -> Result<FeatureVector> {
    h.expect_dim(stats.dim())?;
    AugmentationSampler::new(stats, lambda)?.sample(h, rng)
}

/// Shifted first and second moment sums of `outputs` values, relative to a
/// fixed reference. Shifting keeps the variance well conditioned and makes
/// the mean exact when every sample equals the reference.
#[derive(Debug, Clone)]
struct MomentSums {
    first: Vec<CompensatedSum>,
    second: Vec<CompensatedSum>,
}

impl MomentSums {
    fn new(n: usize) -> Self {
        Self {
            first: vec![CompensatedSum::default(); n],
            second: vec![CompensatedSum::default(); n],
        }
    }

    fn merge(&mut self, other: &MomentSums) {
        for (a, b) in self.first.iter_mut().zip(&other.first) {
            a.merge(b);
        }
        for (a, b) in self.second.iter_mut().zip(&other.second) {
            a.merge(b);
        }
    }
}

/// Mean and standard error of `m` draws of a vector-valued statistic.
/// `make_draw` builds a per-chunk drawing closure that fills one sample.
fn chunked_moments<G, D>(m: usize, seed: u64, reference: &[f64], make_draw: G) -> Vec<(f64, Option<f64>)>
where
    G: Fn() -> D + Sync,
    D: FnMut(&mut ChaCha8Rng, &mut [f64]),
{
    let n_out = reference.len();
    let n_chunks = m.div_ceil(CHUNK_SAMPLES);
    let partials: Vec<MomentSums> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = substream(seed, c as u64);
            let count = CHUNK_SAMPLES.min(m - c * CHUNK_SAMPLES);
            let mut sums = MomentSums::new(n_out);
            let mut values = vec![0.0; n_out];
            let mut draw = make_draw();
            for _ in 0..count {
                draw(&mut rng, &mut values);
                for (j, (&v, &r)) in values.iter().zip(reference).enumerate() {
                    let dev = v - r;
                    sums.first[j].add(dev);
                    sums.second[j].add(dev * dev);
                }
            }
            sums
        })
        .collect();
    let mut total = MomentSums::new(n_out);
    for p in &partials {
        total.merge(p);
    }
    let mf = m as f64;
    (0..n_out)
        .map(|j| {
            let s1 = total.first[j].value();
            let s2 = total.second[j].value();
            let mean = reference[j] + s1 / mf;
            let stderr = if s1 == 0.0 && s2 == 0.0 {
                Some(0.0)
            } else if m < 2 {
                None
            } else {
                let var = ((s2 - s1 * s1 / mf) / (mf - 1.0)).max(0.0);
                Some((var / mf).sqrt())
            };
            (mean, stderr)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateEstimate {
    pub token: usize,
    /// Monte-Carlo mean of the inverse probability (linear domain).
    pub estimate: f64,
    /// Sample standard deviation over √M; `None` when undefined (M = 1
    /// with non-degenerate sampling).
    pub std_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub candidates: Vec<CandidateEstimate>,
    pub m: usize,
    pub seed: u64,
    /// Argmin of the estimates, ties to the lowest index.
    pub decision: usize,
}

/// Inverse softmax probability of every candidate at feature `h`.
/// `positions[j]` locates candidate `j` inside `sum_tokens`.
fn inverse_probs(
    head: &ClassifierHead,
    sum_tokens: &[usize],
    positions: &[usize],
    h: &[f64],
    logits: &mut [f64],
    out: &mut [f64],
) {
    for (z, &k) in logits.iter_mut().zip(sum_tokens) {
        *z = linalg::dot(head.row(k), h) + head.biases()[k];
    }
    let lse = linalg::log_sum_exp(logits.iter().copied());
    for (o, &p) in out.iter_mut().zip(positions) {
        *o = (lse - logits[p]).exp();
    }
}

/// Monte-Carlo estimate of the expected inverse probability of every
/// candidate under `m` explicit augmentations of `h`.
pub fn mc_scores(
    head: &ClassifierHead,
    h: &FeatureVector,
    stats: &DemoStats,
    lambda: f64,
    m: usize,
    seed: u64,
    options: ScoringOptions,
) -> Result<OracleReport> {
    if stats.dim() != head.dim() {
        return Err(Error::DimensionMismatch {
            expected: head.dim(),
            found: stats.dim(),
        });
    }
    let sampler = AugmentationSampler::new(stats, lambda)?;
    mc_scores_with(head, h, &sampler, m, seed, options)
}

/// [`mc_scores`] with a prepared sampler.
pub fn mc_scores_with(
    head: &ClassifierHead,
    h: &FeatureVector,
    sampler: &AugmentationSampler,
    m: usize,
    seed: u64,
    options: ScoringOptions,
) -> Result<OracleReport> {
    if m == 0 {
        return Err(Error::InvalidValue {
            field: "m",
            reason: "need at least one sample".into(),
        });
    }
    h.expect_dim(head.dim())?;
    if sampler.dim() != head.dim() {
        return Err(Error::DimensionMismatch {
            expected: head.dim(),
            found: sampler.dim(),
        });
    }
    let sum_tokens: Vec<usize> = if options.restrict_candidates {
        head.candidates().to_vec()
    } else {
        (0..head.vocab_size()).collect()
    };
    let positions: Vec<usize> = head
        .candidates()
        .iter()
        .map(|c| sum_tokens.iter().position(|t| t == c).expect("candidate in sum set"))
        .collect();
    let d = head.dim();
    let n_out = head.num_candidates();

    let mut center = vec![0.0; d];
    sampler.center_into(h.as_slice(), &mut center);
    let mut logits = vec![0.0; sum_tokens.len()];
    let mut reference = vec![0.0; n_out];
    inverse_probs(head, &sum_tokens, &positions, &center, &mut logits, &mut reference);

    let moments = if sampler.is_degenerate() {
        // λ = 0: every draw is h itself.
        let mut at_h = vec![0.0; n_out];
        inverse_probs(head, &sum_tokens, &positions, h.as_slice(), &mut logits, &mut at_h);
        at_h.into_iter().map(|v| (v, Some(0.0))).collect()
    } else {
        let (sum_tokens, positions) = (&sum_tokens, &positions);
        chunked_moments(m, seed, &reference, || {
            let mut z = vec![0.0; d];
            let mut ht = vec![0.0; d];
            let mut logits = vec![0.0; sum_tokens.len()];
            move |rng: &mut ChaCha8Rng, out: &mut [f64]| {
                sampler.sample_into(h.as_slice(), rng, &mut z, &mut ht);
                inverse_probs(head, sum_tokens, positions, &ht, &mut logits, out);
            }
        })
    };

    let candidates: Vec<CandidateEstimate> = head
        .candidates()
        .iter()
        .zip(moments)
        .map(|(&token, (estimate, std_error))| CandidateEstimate {
            token,
            estimate,
            std_error,
        })
        .collect();
    let mut decision = 0;
    for (j, c) in candidates.iter().enumerate() {
        if c.estimate < candidates[decision].estimate {
            decision = j;
        }
    }
    Ok(OracleReport {
        candidates,
        m,
        seed,
        decision,
    })
}

/// Relative gap below which the closed form and the estimate are taken to
/// agree exactly (floating-point rounding of two different routes).
pub const ROUNDING_AGREEMENT: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateComparison {
    pub token: usize,
    pub estimate: f64,
    pub stderr: Option<f64>,
    /// `exp` of the closed-form log-score.
    pub closed_form: f64,
    /// `(estimate − closed_form) / stderr`; 0 when the two agree to rounding,
    /// `None` when the standard error is undefined.
    pub z_gap: Option<f64>,
}

impl CandidateComparison {
    pub fn relative_gap(&self) -> f64 {
        (self.estimate - self.closed_form).abs() / self.closed_form.abs()
    }
}

/// Pairs oracle estimates with closed-form log-scores.
pub fn compare(report: &OracleReport, closed: &ScoreVector) -> Result<Vec<CandidateComparison>> {
    if closed.len() != report.candidates.len() {
        return Err(Error::LengthMismatch {
            expected: report.candidates.len(),
            found: closed.len(),
        });
    }
    Ok(report
        .candidates
        .iter()
        .zip(closed.log_scores())
        .map(|(c, &log_p)| {
            let closed_form = log_p.exp();
            let gap = c.estimate - closed_form;
            let z_gap = if gap.abs() <= ROUNDING_AGREEMENT * closed_form.abs() {
                Some(0.0)
            } else {
                c.std_error.map(|se| gap / se)
            };
            CandidateComparison {
                token: c.token,
                estimate: c.estimate,
                stderr: c.std_error,
                closed_form,
                z_gap,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MgfCheck {
    pub mc_mean: f64,
    pub std_error: Option<f64>,
    pub analytic: f64,
}

impl MgfCheck {
    /// |mc − analytic| within `k` standard errors (exact match when the
    /// standard error is zero).
    pub fn within(&self, k: f64) -> bool {
        let gap = (self.mc_mean - self.analytic).abs();
        match self.std_error {
            Some(se) => gap <= k * se || gap <= ROUNDING_AGREEMENT * self.analytic.abs(),
            None => false,
        }
    }
}

/// Monte-Carlo mean of `e^{tX}`, `X ~ N(μ, σ²)`, next to the analytic MGF
/// `e^{tμ + t²σ²/2}`.
pub fn mgf_check(t: f64, mu: f64, sigma2: f64, m: usize, seed: u64) -> Result<MgfCheck> {
    if !(sigma2.is_finite() && sigma2 >= 0.0) {
        return Err(Error::InvalidValue {
            field: "sigma2",
            reason: format!("{sigma2} is not a non-negative real"),
        });
    }
    if m == 0 {
        return Err(Error::InvalidValue {
            field: "m",
            reason: "need at least one sample".into(),
        });
    }
    let sigma = sigma2.sqrt();
    let reference = [(t * mu).exp()];
    let analytic = (t * mu + 0.5 * t * t * sigma2).exp();
    let (mc_mean, std_error) = chunked_moments(m, seed, &reference, || {
        move |rng: &mut ChaCha8Rng, out: &mut [f64]| {
            let z: f64 = rng.sample(StandardNormal);
            out[0] = (t * (mu + sigma * z)).exp();
        }
    })[0];
    Ok(MgfCheck {
        mc_mean,
        std_error,
        analytic,
    })
}
