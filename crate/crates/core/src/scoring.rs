//! Closed-form scoring.
//!
//! For candidate `y` the inverse-probability score under infinite Gaussian
//! augmentation of the demonstration feature is
//!
//! ```text
//! P(y) = Σ_k exp( λ Δw_kᵀμ + (λ/2) Δw_kᵀ Σ Δw_k + Δw_kᵀh + Δb_k ),
//! Δw_k = w_k − w_y,  Δb_k = b_k − b_y
//! ```
//!
//! which is the Gaussian moment-generating function applied term by term.
//! Everything here works on `log P`, evaluated with a max-shifted
//! log-sum-exp. Lower is better.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, dot};
use crate::types::{ClassPriors, ClassifierHead, DemoStats, FeatureVector, ScoreVector};

/// Log-scores above this are treated as saturated by the prior term: the
/// additive `τ log π` is far below representational significance.
pub const SATURATION_LOG: f64 = 700.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoringOptions {
    /// Sum over the candidate tokens only instead of the whole vocabulary.
    pub restrict_candidates: bool,
    /// Use only the diagonal of the covariance in the quadratic form.
    pub diagonal_cov: bool,
}

/// `log softmax(z)[token]` with `z_k = w_kᵀh + b_k`.
pub fn log_softmax_prob(head: &ClassifierHead, h: &FeatureVector, token: usize) -> Result<f64> {
    h.expect_dim(head.dim())?;
    if token >= head.vocab_size() {
        return Err(Error::TokenOutOfRange {
            token,
            vocab_size: head.vocab_size(),
        });
    }
    let logits = head.logits(h.as_slice());
    Ok(logits[token] - linalg::log_sum_exp(logits.iter().copied()))
}

/// Query-independent part of the closed-form score, prepared once per
/// (head, statistics, λ) and reused across queries.
#[derive(Debug, Clone)]
pub struct IdaScorer<'a> {
    head: &'a ClassifierHead,
    lambda: f64,
    options: ScoringOptions,
    /// Tokens the inner sum ranges over.
    sum_tokens: Vec<usize>,
    /// `offsets[j][i] = Δb + λ Δwᵀμ + (λ/2) Δwᵀ Σ Δw` for candidate `j`
    /// and summation token `sum_tokens[i]`.
    offsets: Vec<Vec<f64>>,
    /// Position of candidate `j` inside `sum_tokens`.
    self_index: Vec<usize>,
}

impl<'a> IdaScorer<'a> {
    pub fn new(
        head: &'a ClassifierHead,
        stats: &DemoStats,
        lambda: f64,
        options: ScoringOptions,
    ) -> Result<Self> {
        let d = head.dim();
        if stats.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: stats.dim(),
            });
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidValue {
                field: "lambda",
                reason: format!("{lambda} is not a non-negative real"),
            });
        }
        let sum_tokens: Vec<usize> = if options.restrict_candidates {
            head.candidates().to_vec()
        } else {
            (0..head.vocab_size()).collect()
        };
        let self_index: Vec<usize> = head
            .candidates()
            .iter()
            .map(|c| sum_tokens.iter().position(|t| t == c).expect("candidate in sum set"))
            .collect();

        let biases = head.biases();
        let mut offsets: Vec<Vec<f64>> = head
            .candidates()
            .iter()
            .map(|&y| sum_tokens.iter().map(|&k| biases[k] - biases[y]).collect())
            .collect();

        if lambda > 0.0 {
            // w_kᵀμ and the rows Σ w_k for every summation token.
            let mean_proj: Vec<f64> = sum_tokens.iter().map(|&k| dot(head.row(k), stats.mean())).collect();
            let cov_rows: Vec<Vec<f64>> = sum_tokens
                .par_iter()
                .map(|&k| cov_times(stats, head.row(k), options.diagonal_cov))
                .collect();
            let half = 0.5 * lambda;
            offsets
                .par_iter_mut()
                .zip(head.candidates().par_iter().zip(&self_index))
                .for_each(|(row, (&y, &yi))| {
                    let wy = head.row(y);
                    let mut dw = vec![0.0; d];
                    for (i, &k) in sum_tokens.iter().enumerate() {
                        let wk = head.row(k);
                        for ((o, a), b) in dw.iter_mut().zip(wk).zip(wy) {
                            *o = a - b;
                        }
                        let quad: f64 = dw
                            .iter()
                            .zip(cov_rows[i].iter().zip(&cov_rows[yi]))
                            .map(|(w, (pk, py))| w * (pk - py))
                            .sum();
                        row[i] += lambda * (mean_proj[i] - mean_proj[yi]) + half * quad;
                    }
                });
        }

        Ok(Self {
            head,
            lambda,
            options,
            sum_tokens,
            offsets,
            self_index,
        })
    }

    pub fn head(&self) -> &ClassifierHead {
        self.head
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn options(&self) -> ScoringOptions {
        self.options
    }

    fn projections(&self, h: &FeatureVector) -> Result<Vec<f64>> {
        h.expect_dim(self.head.dim())?;
        Ok(self
            .sum_tokens
            .iter()
            .map(|&k| dot(self.head.row(k), h.as_slice()))
            .collect())
    }

    fn score_from_projections(&self, proj: &[f64], j: usize) -> f64 {
        let py = proj[self.self_index[j]];
        let offsets = &self.offsets[j];
        let terms = proj.iter().zip(offsets).map(|(pk, off)| (pk - py) + off);
        linalg::log_sum_exp(terms)
    }

    /// `log P` for the candidate at position `j` of `head.candidates()`.
    pub fn log_score(&self, h: &FeatureVector, j: usize) -> Result<f64> {
        if j >= self.head.num_candidates() {
            return Err(Error::CandidateOutOfRange {
                index: j,
                limit: self.head.num_candidates(),
            });
        }
        let proj = self.projections(h)?;
        Ok(self.score_from_projections(&proj, j))
    }

    pub fn scores(&self, h: &FeatureVector) -> Result<ScoreVector> {
        let proj = self.projections(h)?;
        let scores = (0..self.head.num_candidates())
            .map(|j| self.score_from_projections(&proj, j))
            .collect();
        ScoreVector::new(scores)
    }
}

/// `Σ v`, or `diag(Σ) ∘ v` in diagonal mode.
fn cov_times(stats: &DemoStats, v: &[f64], diagonal: bool) -> Vec<f64> {
    let d = stats.dim();
    if diagonal {
        (0..d).map(|i| stats.cov_at(i, i) * v[i]).collect()
    } else {
        stats.cov().chunks_exact(d).map(|row| dot(row, v)).collect()
    }
}

/// Closed-form `log P` for the candidate at position `candidate`.
pub fn ida_log_score(
    head: &ClassifierHead,
    h: &FeatureVector,
    stats: &DemoStats,
    lambda: f64,
    candidate: usize,
    options: ScoringOptions,
) -> Result<f64> {
    IdaScorer::new(head, stats, lambda, options)?.log_score(h, candidate)
}

/// Closed-form `log P` for every candidate, in candidate order.
pub fn ida_scores(
    head: &ClassifierHead,
    h: &FeatureVector,
    stats: &DemoStats,
    lambda: f64,
    options: ScoringOptions,
) -> Result<ScoreVector> {
    IdaScorer::new(head, stats, lambda, options)?.scores(h)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriorAdjusted {
    pub scores: ScoreVector,
    /// Some entry exceeded [`SATURATION_LOG`] and was passed through.
    pub saturated: bool,
}

/// Adds `τ log π_j` to the linear-domain score: `log(exp(s_j) + τ log π_j)`.
///
/// Fails with `NonPositiveAdjusted` when the adjusted linear value is not
/// positive, since it then has no logarithm. Use [`decide_with_priors`] to
/// take the decision regardless of sign.
pub fn adjust_with_priors(scores: &ScoreVector, priors: &ClassPriors, tau: f64) -> Result<PriorAdjusted> {
    if priors.len() != scores.len() {
        return Err(Error::LengthMismatch {
            expected: scores.len(),
            found: priors.len(),
        });
    }
    if tau == 0.0 {
        return Ok(PriorAdjusted {
            scores: scores.clone(),
            saturated: false,
        });
    }
    let mut saturated = false;
    let mut out = Vec::with_capacity(scores.len());
    for (index, (&s, &p)) in scores.log_scores().iter().zip(priors.probs()).enumerate() {
        if s > SATURATION_LOG {
            saturated = true;
            out.push(s);
            continue;
        }
        let shift = tau * p.ln();
        let ratio = shift * (-s).exp();
        if ratio <= -1.0 {
            return Err(Error::NonPositiveAdjusted {
                index,
                value: s.exp() + shift,
            });
        }
        out.push(s + ratio.ln_1p());
    }
    Ok(PriorAdjusted {
        scores: ScoreVector::new(out)?,
        saturated,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decision {
    pub candidate_index: usize,
    /// The unadjusted scores the decision was taken from.
    pub scores: ScoreVector,
    /// Whether class priors entered the decision.
    pub adjusted: bool,
}

fn argmin_by<T: PartialOrd>(keys: impl Iterator<Item = T>) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, k) in keys.enumerate() {
        if best.as_ref().is_none_or(|(_, b)| k < *b) {
            best = Some((i, k));
        }
    }
    best.map(|(i, _)| i)
}

/// Lowest score wins; ties go to the lowest index.
pub fn decide(scores: &ScoreVector) -> Result<Decision> {
    let candidate_index = argmin_by(scores.log_scores().iter().copied()).ok_or(Error::EmptyScores)?;
    Ok(Decision {
        candidate_index,
        scores: scores.clone(),
        adjusted: false,
    })
}

/// Outcome of prior-adjusted prediction for one query.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub log_scores: Vec<f64>,
    /// `None` where the adjusted linear value is not positive.
    pub adjusted_log_scores: Vec<Option<f64>>,
    pub decision: usize,
    pub saturated: bool,
    /// Whether class priors entered the decision.
    pub adjusted: bool,
}

impl Prediction {
    pub fn to_decision(&self) -> Result<Decision> {
        Ok(Decision {
            candidate_index: self.decision,
            scores: ScoreVector::new(self.log_scores.clone())?,
            adjusted: self.adjusted,
        })
    }
}

/// Argmin of the prior-adjusted linear scores `exp(s_j) + τ log π_j`.
///
/// Unlike [`adjust_with_priors`] this never fails on non-positive adjusted
/// values; the argmin is well defined for any sign. Saturated entries
/// (`s_j >` [`SATURATION_LOG`]) compare by their raw log-score and rank
/// above every unsaturated entry.
pub fn decide_with_priors(scores: &ScoreVector, priors: &ClassPriors, tau: f64) -> Result<Prediction> {
    if priors.len() != scores.len() {
        return Err(Error::LengthMismatch {
            expected: scores.len(),
            found: priors.len(),
        });
    }
    let s = scores.log_scores();
    if s.is_empty() {
        return Err(Error::EmptyScores);
    }
    if tau == 0.0 {
        let decision = decide(scores)?.candidate_index;
        return Ok(Prediction {
            log_scores: s.to_vec(),
            adjusted_log_scores: s.iter().map(|&v| Some(v)).collect(),
            decision,
            saturated: false,
            adjusted: false,
        });
    }
    let mut saturated = false;
    let mut keys = Vec::with_capacity(s.len());
    let mut adjusted = Vec::with_capacity(s.len());
    for (&si, &p) in s.iter().zip(priors.probs()) {
        if si > SATURATION_LOG {
            saturated = true;
            keys.push((1u8, si));
            adjusted.push(Some(si));
        } else {
            let shift = tau * p.ln();
            keys.push((0u8, si.exp() + shift));
            let ratio = shift * (-si).exp();
            adjusted.push((ratio > -1.0).then(|| si + ratio.ln_1p()));
        }
    }
    let decision = argmin_by(keys.into_iter()).expect("non-empty");
    Ok(Prediction {
        log_scores: s.to_vec(),
        adjusted_log_scores: adjusted,
        decision,
        saturated,
        adjusted: true,
    })
}

/// Scores and decides one query: closed-form scores, then the
/// prior-adjusted argmin (plain argmin when `priors` is `None`).
pub fn predict(
    scorer: &IdaScorer<'_>,
    h: &FeatureVector,
    priors: Option<&ClassPriors>,
    tau: f64,
) -> Result<Prediction> {
    let scores = scorer.scores(h)?;
    match priors {
        Some(p) => decide_with_priors(&scores, p, tau),
        None => decide_with_priors(&scores, &ClassPriors::uniform(scores.len())?, 0.0),
    }
}
