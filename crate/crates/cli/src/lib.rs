//! Command implementations behind the `ida` binary. Each command writes its
//! primary output to the given writer (or `--output`) and returns a
//! [`CliError`] whose [`CliError::exit_code`] is the process status.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ida_core::bundle::{read_bundle, write_bundle, Bundle};
use ida_core::metrics::evaluate;
use ida_core::oracle::{compare, derive_seed, mc_scores_with, AugmentationSampler, CandidateComparison};
use ida_core::scoring::{predict, IdaScorer, ScoringOptions};
use ida_core::stats::{dedup_features, estimate_stats, regularize};
use ida_core::synthetic::{empirical_priors, generate_task, SyntheticSpec};
use ida_core::types::{ClassPriors, DemoStats, DEFAULT_LAMBDA, DEFAULT_TAU};
use rayon::prelude::*;
use serde::Serialize;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// |z| above which `oracle` reports a disagreement.
pub const ORACLE_Z_LIMIT: f64 = 5.0;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] ida_core::Error),

    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },

    #[error("closed form and Monte-Carlo estimate disagree: max |z| = {max_abs_z:.3} > {ORACLE_Z_LIMIT}")]
    OracleDisagreement { max_abs_z: f64 },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numeric() => EXIT_NUMERIC,
            CliError::OracleDisagreement { .. } => EXIT_NUMERIC,
            _ => EXIT_INPUT,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(name = "ida", version, about = "Closed-form demonstration-augmented scoring for in-context classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate demonstration statistics and store them in the bundle.
    Stats(StatsArgs),
    /// Score every query and write JSON-lines predictions.
    Predict(RunConfig),
    /// Compare closed-form scores with a Monte-Carlo estimate.
    Oracle(OracleArgs),
    /// Write a synthetic task bundle.
    Simulate(SimulateArgs),
    /// Time closed-form scoring against explicit sampling.
    Bench(BenchArgs),
    /// Score predictions against the bundle's query labels.
    Eval(EvalArgs),
}

/// Flags shared by the scoring commands.
#[derive(Debug, Clone, Args)]
pub struct RunConfig {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Augmentation strength.
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
    /// Weight of the class-prior adjustment.
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    /// Sum only over candidate tokens instead of the whole vocabulary.
    #[arg(long)]
    pub restrict_candidates: bool,
    /// Drop bit-identical demonstration features before estimating stats.
    #[arg(long)]
    pub dedup: bool,
    /// Use only the covariance diagonal.
    #[arg(long)]
    pub diagonal_cov: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(bundle: impl Into<PathBuf>) -> Self {
        Self {
            bundle: bundle.into(),
            lambda: DEFAULT_LAMBDA,
            tau: DEFAULT_TAU,
            restrict_candidates: false,
            dedup: false,
            diagonal_cov: false,
            seed: 0,
            output: None,
        }
    }

    pub fn options(&self) -> ScoringOptions {
        ScoringOptions {
            restrict_candidates: self.restrict_candidates,
            diagonal_cov: self.diagonal_cov,
        }
    }

    fn check(&self) -> CliResult<()> {
        for (name, v) in [("--lambda", self.lambda), ("--tau", self.tau)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CliError::Usage(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub dedup: bool,
    /// Ridge added as `eps · trace/d · I` before storing.
    #[arg(long)]
    pub regularize: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub run: RunConfig,
    #[arg(long, default_value_t = 100_000)]
    pub m_samples: usize,
    /// Query indices to check (repeatable).
    #[arg(long = "query", default_values_t = [0usize])]
    pub queries: Vec<usize>,
    #[arg(long, conflicts_with = "queries")]
    pub all_queries: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// JSON synthetic spec; the inline flags below are ignored when given.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, default_value_t = 2)]
    pub num_classes: usize,
    /// Distance between every pair of class means.
    #[arg(long, default_value_t = 2.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 1.0)]
    pub cov_scale: f64,
    /// Comma-separated class proportions of the demonstrations.
    #[arg(long, value_delimiter = ',')]
    pub demo_priors: Option<Vec<f64>>,
    #[arg(long, default_value_t = 40)]
    pub n_demos: usize,
    #[arg(long, default_value_t = 500)]
    pub n_queries: usize,
    #[arg(long, default_value_t = 0.0)]
    pub head_noise: f64,
    #[arg(long, default_value_t = 0.0)]
    pub context_mix: f64,
    #[arg(long, default_value_t = 0)]
    pub extra_vocab: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub run: RunConfig,
    #[arg(long, default_value_t = 10_000)]
    pub m_samples: usize,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    /// Queries timed per repetition with explicit sampling.
    #[arg(long, default_value_t = 1)]
    pub mc_queries: usize,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// JSON-lines file written by `predict`.
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub confusion_csv: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Dispatches one parsed command.
pub fn run(cli: &Cli, stdout: &mut dyn Write) -> CliResult<()> {
    match &cli.command {
        Command::Stats(a) => cmd_stats(a, stdout).map(|_| ()),
        Command::Predict(c) => cmd_predict(c, stdout).map(|_| ()),
        Command::Oracle(a) => cmd_oracle(a, stdout).map(|_| ()),
        Command::Simulate(a) => cmd_simulate(a, stdout),
        Command::Bench(a) => cmd_bench(a, stdout).map(|_| ()),
        Command::Eval(a) => cmd_eval(a, stdout).map(|_| ()),
    }
}

/// Caps the global worker pool from `IDA_THREADS`, if set.
pub fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("IDA_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("IDA_THREADS must be a positive integer, got {raw:?}")))?;
    // Fails only if a pool already exists, in which case it stays as is.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn with_output<T>(path: Option<&Path>, stdout: &mut dyn Write, f: impl FnOnce(&mut dyn Write) -> CliResult<T>) -> CliResult<T> {
    match path {
        Some(p) => {
            let file = File::create(p).map_err(io_err(p))?;
            let mut w = BufWriter::new(file);
            let out = f(&mut w)?;
            w.flush().map_err(io_err(p))?;
            Ok(out)
        }
        None => {
            let out = f(stdout)?;
            stdout.flush().map_err(io_err(Path::new("<stdout>")))?;
            Ok(out)
        }
    }
}

fn write_json(w: &mut dyn Write, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable report");
    writeln!(w, "{text}").map_err(io_err(Path::new("<output>")))
}

/// Stored stats when present, otherwise estimated from the demonstrations.
pub fn resolve_stats(bundle: &Bundle, dedup: bool) -> CliResult<DemoStats> {
    if let Some(s) = &bundle.stats {
        return Ok(s.clone());
    }
    if bundle.demo_features.is_empty() {
        return Err(CliError::Usage(
            "bundle has no stats and no demonstration features to estimate them from; run `ida stats` on a bundle with demos".into(),
        ));
    }
    let demos = if dedup {
        dedup_features(&bundle.demo_features)
    } else {
        bundle.demo_features.clone()
    };
    Ok(estimate_stats(&demos)?)
}

/// Class priors from demonstration labels, uniform when they are absent.
pub fn resolve_priors(bundle: &Bundle) -> CliResult<ClassPriors> {
    match &bundle.demo_labels {
        Some(labels) if !labels.is_empty() => Ok(empirical_priors(labels, bundle.num_classes())?),
        _ => Ok(ClassPriors::uniform(bundle.num_classes())?),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StatsReport {
    pub count: usize,
    pub dim: usize,
    pub trace: f64,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub deduplicated: bool,
    pub regularize: Option<f64>,
}

pub fn cmd_stats(args: &StatsArgs, stdout: &mut dyn Write) -> CliResult<StatsReport> {
    let mut bundle = read_bundle(&args.bundle)?;
    if bundle.demo_features.is_empty() {
        return Err(ida_core::Error::EmptyInput("bundle has no demonstration features".into()).into());
    }
    let demos = if args.dedup {
        dedup_features(&bundle.demo_features)
    } else {
        bundle.demo_features.clone()
    };
    let mut stats = estimate_stats(&demos)?;
    if let Some(eps) = args.regularize {
        if !(eps.is_finite() && eps >= 0.0) {
            return Err(CliError::Usage(format!("--regularize must be non-negative, got {eps}")));
        }
        stats = regularize(&stats, eps);
    }
    let d = stats.dim();
    let eig = nalgebra::DMatrix::from_row_slice(d, d, stats.cov()).symmetric_eigenvalues();
    let report = StatsReport {
        count: stats.count(),
        dim: d,
        trace: stats.trace(),
        min_eigenvalue: eig.min(),
        max_eigenvalue: eig.max(),
        deduplicated: args.dedup,
        regularize: args.regularize,
    };
    bundle.stats = Some(stats);
    write_bundle(&args.bundle, &bundle)?;
    write_json(stdout, &report)?;
    Ok(report)
}

/// One JSON-lines record of `predict`.
#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct PredictionRecord {
    pub query_id: usize,
    pub log_scores: Vec<f64>,
    pub adjusted_log_scores: Vec<Option<f64>>,
    pub decision: usize,
    pub saturated: bool,
}

/// Scores every query of the bundle.
pub fn predict_bundle(bundle: &Bundle, config: &RunConfig) -> CliResult<Vec<PredictionRecord>> {
    config.check()?;
    let stats = resolve_stats(bundle, config.dedup)?;
    let priors = resolve_priors(bundle)?;
    let scorer = IdaScorer::new(&bundle.head, &stats, config.lambda, config.options())?;
    let records = bundle
        .query_features
        .par_iter()
        .enumerate()
        .map(|(query_id, h)| {
            let p = predict(&scorer, h, Some(&priors), config.tau)?;
            Ok(PredictionRecord {
                query_id,
                log_scores: p.log_scores,
                adjusted_log_scores: p.adjusted_log_scores,
                decision: p.decision,
                saturated: p.saturated,
            })
        })
        .collect::<ida_core::Result<Vec<_>>>()?;
    Ok(records)
}

pub fn cmd_predict(config: &RunConfig, stdout: &mut dyn Write) -> CliResult<Vec<PredictionRecord>> {
    let bundle = read_bundle(&config.bundle)?;
    let records = predict_bundle(&bundle, config)?;
    with_output(config.output.as_deref(), stdout, |w| {
        for r in &records {
            let line = serde_json::to_string(r).expect("serializable record");
            writeln!(w, "{line}").map_err(io_err(Path::new("<output>")))?;
        }
        Ok(())
    })?;
    Ok(records)
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleCandidate {
    pub token: usize,
    pub label: String,
    pub estimate: f64,
    pub stderr: Option<f64>,
    pub closed_form: f64,
    pub z_gap: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleQuery {
    pub query_id: usize,
    pub seed: u64,
    pub mc_decision: usize,
    pub closed_form_decision: usize,
    pub candidates: Vec<OracleCandidate>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleOutput {
    pub lambda: f64,
    pub m_samples: usize,
    pub seed: u64,
    pub ridge: f64,
    pub queries: Vec<OracleQuery>,
    pub max_abs_z: Option<f64>,
    pub z_limit: f64,
    pub passed: bool,
}

pub fn oracle_bundle(bundle: &Bundle, args: &OracleArgs) -> CliResult<OracleOutput> {
    let config = &args.run;
    config.check()?;
    if args.m_samples == 0 {
        return Err(CliError::Usage("--m-samples must be at least 1".into()));
    }
    let ids: Vec<usize> = if args.all_queries {
        (0..bundle.query_features.len()).collect()
    } else {
        args.queries.clone()
    };
    if let Some(&bad) = ids.iter().find(|&&q| q >= bundle.query_features.len()) {
        return Err(CliError::Usage(format!(
            "--query {bad} out of range: bundle has {} queries",
            bundle.query_features.len()
        )));
    }
    let stats = resolve_stats(bundle, config.dedup)?;
    let scorer = IdaScorer::new(&bundle.head, &stats, config.lambda, config.options())?;
    let sampler = AugmentationSampler::new(&stats, config.lambda)?;

    let mut queries = Vec::with_capacity(ids.len());
    for &q in &ids {
        let h = &bundle.query_features[q];
        let seed = derive_seed(config.seed, q as u64);
        let closed = scorer.scores(h)?;
        let report = mc_scores_with(&bundle.head, h, &sampler, args.m_samples, seed, config.options())?;
        let rows: Vec<CandidateComparison> = compare(&report, &closed)?;
        queries.push(OracleQuery {
            query_id: q,
            seed,
            mc_decision: report.decision,
            closed_form_decision: ida_core::decide(&closed)?.candidate_index,
            candidates: rows
                .into_iter()
                .enumerate()
                .map(|(j, c)| OracleCandidate {
                    token: c.token,
                    label: bundle.label_names[j].clone(),
                    estimate: c.estimate,
                    stderr: c.stderr,
                    closed_form: c.closed_form,
                    z_gap: c.z_gap,
                })
                .collect(),
        });
    }
    let max_abs_z = queries
        .iter()
        .flat_map(|q| q.candidates.iter().filter_map(|c| c.z_gap))
        .map(f64::abs)
        .reduce(f64::max);
    Ok(OracleOutput {
        lambda: config.lambda,
        m_samples: args.m_samples,
        seed: config.seed,
        ridge: sampler.ridge(),
        queries,
        max_abs_z,
        z_limit: ORACLE_Z_LIMIT,
        passed: max_abs_z.is_none_or(|z| z <= ORACLE_Z_LIMIT),
    })
}

pub fn cmd_oracle(args: &OracleArgs, stdout: &mut dyn Write) -> CliResult<OracleOutput> {
    let bundle = read_bundle(&args.run.bundle)?;
    let out = oracle_bundle(&bundle, args)?;
    with_output(args.run.output.as_deref(), stdout, |w| write_json(w, &out))?;
    match out.max_abs_z {
        Some(z) if z > ORACLE_Z_LIMIT => Err(CliError::OracleDisagreement { max_abs_z: z }),
        _ => Ok(out),
    }
}

/// Builds the spec for `simulate` from inline flags. Two classes sit at
/// `±separation/2` on the first axis; with more classes, class `c` sits at
/// `separation/√2 · e_c` so every pair is `separation` apart.
pub fn spec_from_flags(a: &SimulateArgs) -> CliResult<SyntheticSpec> {
    let c = a.num_classes;
    let class_means = if c == 2 {
        SyntheticSpec::two_class(a.dim.max(1), a.separation, [0.5, 0.5], a.seed).class_means
    } else {
        if a.dim < c {
            return Err(CliError::Usage(format!(
                "inline specs with {c} classes need --dim >= {c}; pass --spec for custom means"
            )));
        }
        (0..c)
            .map(|k| {
                let mut m = vec![0.0; a.dim];
                m[k] = a.separation / 2f64.sqrt();
                m
            })
            .collect()
    };
    let demo_priors = a.demo_priors.clone().unwrap_or_else(|| vec![1.0 / c as f64; c]);
    Ok(SyntheticSpec {
        dim: a.dim,
        num_classes: c,
        class_means,
        shared_cov_scale: a.cov_scale,
        demo_priors,
        n_demos: a.n_demos,
        n_queries: a.n_queries,
        head_noise: a.head_noise,
        seed: a.seed,
        context_mix: a.context_mix,
        extra_vocab: a.extra_vocab,
    })
}

pub fn cmd_simulate(args: &SimulateArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let spec = match &args.spec {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => spec_from_flags(args)?,
    };
    let bundle = generate_task(&spec)?;
    write_bundle(&args.output, &bundle)?;
    write_json(stdout, &bundle.manifest())
}

#[derive(Debug, Clone, Serialize)]
pub struct TimingSummary {
    pub setup_ms: f64,
    pub queries_per_rep: usize,
    pub median_us_per_query: f64,
    pub min_us_per_query: f64,
    pub max_us_per_query: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub dim: usize,
    pub vocab_size: usize,
    pub num_candidates: usize,
    pub m_samples: usize,
    pub reps: usize,
    pub threads: usize,
    pub closed_form: TimingSummary,
    pub monte_carlo: TimingSummary,
    /// Ratio of median per-query times, Monte-Carlo over closed form.
    pub speedup: f64,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn summarize(setup_ms: f64, queries_per_rep: usize, mut per_query_us: Vec<f64>) -> TimingSummary {
    let min = per_query_us.iter().copied().fold(f64::INFINITY, f64::min);
    let max = per_query_us.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    TimingSummary {
        setup_ms,
        queries_per_rep,
        median_us_per_query: median(&mut per_query_us),
        min_us_per_query: min,
        max_us_per_query: max,
    }
}

pub fn bench_bundle(bundle: &Bundle, args: &BenchArgs) -> CliResult<BenchReport> {
    let config = &args.run;
    config.check()?;
    if args.reps == 0 || args.m_samples == 0 || args.mc_queries == 0 {
        return Err(CliError::Usage("--reps, --m-samples and --mc-queries must be positive".into()));
    }
    if bundle.query_features.is_empty() {
        return Err(ida_core::Error::EmptyInput("bundle has no queries to time".into()).into());
    }
    let stats = resolve_stats(bundle, config.dedup)?;
    let opts = config.options();

    let t = Instant::now();
    let scorer = IdaScorer::new(&bundle.head, &stats, config.lambda, opts)?;
    let closed_setup = t.elapsed().as_secs_f64() * 1e3;
    let t = Instant::now();
    let sampler = AugmentationSampler::new(&stats, config.lambda)?;
    let mc_setup = t.elapsed().as_secs_f64() * 1e3;

    let closed_queries = &bundle.query_features;
    let mc_queries = &bundle.query_features[..args.mc_queries.min(bundle.query_features.len())];
    let mut closed_us = Vec::with_capacity(args.reps);
    let mut mc_us = Vec::with_capacity(args.reps);
    for rep in 0..args.reps {
        let t = Instant::now();
        for h in closed_queries {
            std::hint::black_box(scorer.scores(h)?);
        }
        closed_us.push(t.elapsed().as_secs_f64() * 1e6 / closed_queries.len() as f64);

        let t = Instant::now();
        for (q, h) in mc_queries.iter().enumerate() {
            let seed = derive_seed(config.seed, (rep * mc_queries.len() + q) as u64);
            std::hint::black_box(mc_scores_with(&bundle.head, h, &sampler, args.m_samples, seed, opts)?);
        }
        mc_us.push(t.elapsed().as_secs_f64() * 1e6 / mc_queries.len() as f64);
    }
    let closed_form = summarize(closed_setup, closed_queries.len(), closed_us);
    let monte_carlo = summarize(mc_setup, mc_queries.len(), mc_us);
    Ok(BenchReport {
        dim: bundle.dim(),
        vocab_size: bundle.head.vocab_size(),
        num_candidates: bundle.num_classes(),
        m_samples: args.m_samples,
        reps: args.reps,
        threads: rayon::current_num_threads(),
        speedup: monte_carlo.median_us_per_query / closed_form.median_us_per_query,
        closed_form,
        monte_carlo,
    })
}

pub fn cmd_bench(args: &BenchArgs, stdout: &mut dyn Write) -> CliResult<BenchReport> {
    let bundle = read_bundle(&args.run.bundle)?;
    let report = bench_bundle(&bundle, args)?;
    with_output(args.run.output.as_deref(), stdout, |w| write_json(w, &report))?;
    Ok(report)
}

/// Decisions from a `predict` JSON-lines file, ordered by query id.
pub fn read_predictions(path: &Path, n_queries: usize) -> CliResult<Vec<usize>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut decisions: Vec<Option<usize>> = vec![None; n_queries];
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| CliError::Usage(format!("{}:{}: {msg}", path.display(), lineno + 1));
        let rec: PredictionRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let slot = decisions
            .get_mut(rec.query_id)
            .ok_or_else(|| bad(format!("query_id {} out of range ({n_queries} queries)", rec.query_id)))?;
        if slot.replace(rec.decision).is_some() {
            return Err(bad(format!("duplicate query_id {}", rec.query_id)));
        }
    }
    decisions
        .into_iter()
        .enumerate()
        .map(|(q, d)| d.ok_or_else(|| CliError::Usage(format!("{}: no prediction for query {q}", path.display()))))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalOutput {
    pub label_names: Vec<String>,
    #[serde(flatten)]
    pub report: ida_core::EvalReport,
}

pub fn cmd_eval(args: &EvalArgs, stdout: &mut dyn Write) -> CliResult<EvalOutput> {
    let bundle = read_bundle(&args.bundle)?;
    let truths = bundle
        .query_labels
        .as_ref()
        .ok_or_else(|| CliError::Usage("bundle has no query_labels to evaluate against".into()))?;
    let preds = read_predictions(&args.predictions, bundle.query_features.len())?;
    let report = evaluate(&preds, truths, bundle.num_classes())?;
    if let Some(path) = &args.confusion_csv {
        fs::write(path, report.confusion_csv(Some(&bundle.label_names))).map_err(io_err(path))?;
    }
    let out = EvalOutput {
        label_names: bundle.label_names.clone(),
        report,
    };
    with_output(args.output.as_deref(), stdout, |w| write_json(w, &out))?;
    Ok(out)
}
