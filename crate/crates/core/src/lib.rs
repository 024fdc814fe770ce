//! Closed-form implicit demonstration augmentation for in-context
//! classification.
//!
//! Demonstration features are summarised into a mean and covariance
//! ([`stats`]); candidate labels are scored by the expected log-probability
//! under Gaussian feature augmentation, which has a closed form
//! ([`scoring`]). A Monte-Carlo estimator of the same quantity lives in
//! [`oracle`] for verification. [`bundle`] is the on-disk interchange
//! format, [`synthetic`] builds self-contained tasks and [`metrics`]
//! evaluates predictions.

pub mod bundle;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod oracle;
pub mod scoring;
pub mod stats;
pub mod synthetic;
pub mod types;

pub use bundle::{read_bundle, write_bundle, Bundle, Manifest};
pub use error::{Error, Result};
pub use metrics::{evaluate, seed_summary, EvalReport, SeedSummary};
pub use oracle::{compare, mc_scores, mgf_check, AugmentationSampler, OracleReport};
pub use scoring::{
    adjust_with_priors, decide, decide_with_priors, ida_log_score, ida_scores, log_softmax_prob, predict, Decision,
    IdaScorer, Prediction, ScoringOptions,
};
pub use stats::{estimate_stats, merge_stats, regularize};
pub use synthetic::{empirical_priors, generate_task, SyntheticSpec};
pub use types::{AugmentConfig, ClassPriors, ClassifierHead, DemoStats, FeatureVector, ScoreVector};
