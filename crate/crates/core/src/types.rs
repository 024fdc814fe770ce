//! Domain types shared by every stage of the engine.
//!
//! All values are validated on construction and immutable afterwards, so a
//! value that exists satisfies its invariants. Computation is 64-bit
//! throughout even though bundles store 32-bit floats.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Default augmentation strength.
pub const DEFAULT_LAMBDA: f64 = 0.5;
/// Default weight of the class-prior term.
pub const DEFAULT_TAU: f64 = 1.0;

fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteValue(what.to_string()))
    }
}

/// Final-position hidden state of one contextual input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        ensure_finite(&values, "feature vector")?;
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn expect_dim(&self, dim: usize) -> Result<()> {
        if self.dim() == dim {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: dim,
                found: self.dim(),
            })
        }
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(v: FeatureVector) -> Self {
        v.0
    }
}

/// Mean and population covariance of the demonstration features.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoStats {
    mean: Vec<f64>,
    cov: Vec<f64>,
    count: usize,
}

impl DemoStats {
    /// Validating constructor. `cov` is row-major `d × d`.
    pub fn new(mean: Vec<f64>, cov: Vec<f64>, count: usize) -> Result<Self> {
        Self::with_psd_tolerance(mean, cov, count, 1e-9)
    }

    /// Like [`DemoStats::new`] but accepting a smallest eigenvalue down to
    /// `-psd_tol · trace/d`. Covariances rounded to 32-bit storage need a
    /// looser bound than freshly estimated ones.
    pub fn with_psd_tolerance(mean: Vec<f64>, cov: Vec<f64>, count: usize, psd_tol: f64) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::EmptyInput("stats mean".into()));
        }
        if cov.len() != d * d {
            return Err(Error::DimensionMismatch {
                expected: d * d,
                found: cov.len(),
            });
        }
        if count == 0 {
            return Err(Error::invalid("count", "must be at least 1"));
        }
        ensure_finite(&mean, "stats mean")?;
        ensure_finite(&cov, "stats covariance")?;
        for i in 0..d {
            for j in i + 1..d {
                let (a, b) = (cov[i * d + j], cov[j * d + i]);
                if (a - b).abs() > 1e-12 * a.abs().max(1.0) {
                    return Err(Error::invalid(
                        "cov",
                        format!("not symmetric at ({i}, {j}): {a} vs {b}"),
                    ));
                }
            }
        }
        let shift = psd_tol * (linalg::trace(&cov, d) / d as f64).abs();
        if !linalg::is_psd_with_shift(&cov, d, shift) {
            return Err(Error::invalid("cov", "not positive semi-definite"));
        }
        Ok(Self { mean, cov, count })
    }

    /// For estimators whose output is symmetric PSD by construction.
    pub(crate) fn from_parts_unchecked(mean: Vec<f64>, cov: Vec<f64>, count: usize) -> Self {
        debug_assert_eq!(cov.len(), mean.len() * mean.len());
        Self { mean, cov, count }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Row-major `d × d` covariance.
    pub fn cov(&self) -> &[f64] {
        &self.cov
    }

    pub fn cov_at(&self, i: usize, j: usize) -> f64 {
        self.cov[i * self.dim() + j]
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn trace(&self) -> f64 {
        linalg::trace(&self.cov, self.dim())
    }
}

/// Output layer: weight rows `w_k`, biases `b_k`, and the candidate answer
/// tokens. Candidate order is the canonical class order everywhere else.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    weights: Vec<f64>,
    biases: Vec<f64>,
    candidates: Vec<usize>,
    dim: usize,
}

impl ClassifierHead {
    /// `weights` is row-major `biases.len() × dim`.
    pub fn new(weights: Vec<f64>, biases: Vec<f64>, candidates: Vec<usize>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "must be positive"));
        }
        if weights.len() != biases.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: biases.len() * dim,
                found: weights.len(),
            });
        }
        let head = Self {
            weights,
            biases,
            candidates,
            dim,
        };
        head.check_invariants()?;
        Ok(head)
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, biases: Vec<f64>, candidates: Vec<usize>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.len() != biases.len() {
            return Err(Error::LengthMismatch {
                expected: rows.len(),
                found: biases.len(),
            });
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        Self::new(rows.concat(), biases, candidates, dim)
    }

    fn check_invariants(&self) -> Result<()> {
        let vocab = self.vocab_size();
        if self.candidates.len() < 2 {
            return Err(Error::invalid("candidates", "need at least two candidates"));
        }
        let mut seen = HashSet::with_capacity(self.candidates.len());
        for &c in &self.candidates {
            if c >= vocab {
                return Err(Error::CandidateOutOfRange { index: c, limit: vocab });
            }
            if !seen.insert(c) {
                return Err(Error::DuplicateCandidate(c));
            }
        }
        ensure_finite(&self.weights, "head weights")?;
        ensure_finite(&self.biases, "head biases")?;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.biases.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn row(&self, token: usize) -> &[f64] {
        &self.weights[token * self.dim..(token + 1) * self.dim]
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn candidates(&self) -> &[usize] {
        &self.candidates
    }

    pub fn num_candidates(&self) -> usize {
        self.candidates.len()
    }

    /// `z_k = w_kᵀh + b_k` for every token.
    pub fn logits(&self, h: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.vocab_size()];
        linalg::matvec(&self.weights, h, &mut out);
        for (o, b) in out.iter_mut().zip(&self.biases) {
            *o += b;
        }
        out
    }
}

/// Checks every head invariant and that weight rows have length `dim`.
pub fn validate_head(head: &ClassifierHead, dim: usize) -> Result<()> {
    if head.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: head.dim(),
        });
    }
    head.check_invariants()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    lambda: f64,
    tau: f64,
}

impl AugmentConfig {
    pub fn new(lambda: f64, tau: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::invalid("lambda", format!("{lambda} is not a non-negative real")));
        }
        if !(tau.is_finite() && tau >= 0.0) {
            return Err(Error::invalid("tau", format!("{tau} is not a non-negative real")));
        }
        Ok(Self { lambda, tau })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            tau: DEFAULT_TAU,
        }
    }
}

/// Class proportions, one entry per candidate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassPriors(Vec<f64>);

impl ClassPriors {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::EmptyInput("class priors".into()));
        }
        ensure_finite(&probs, "class priors")?;
        if let Some(p) = probs.iter().find(|&&p| p <= 0.0) {
            return Err(Error::invalid("priors", format!("entry {p} is not positive")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("priors", format!("entries sum to {total}")));
        }
        Ok(Self(probs))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyInput("class priors".into()));
        }
        Ok(Self(vec![1.0 / n as f64; n]))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-candidate log-domain scores; lower is preferred.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(log_scores: Vec<f64>) -> Result<Self> {
        ensure_finite(&log_scores, "scores")?;
        Ok(Self(log_scores))
    }

    pub fn log_scores(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}
