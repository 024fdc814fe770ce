//! Python bindings for `ida-core`.
//!
//! Vectors cross the boundary as plain lists; matrices as lists of rows.
//! Bad input raises `ValueError`, numeric failures `ArithmeticError`,
//! file-system problems `OSError`.

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ida_core::bundle::{read_bundle, write_bundle, Bundle};
use ida_core::oracle::{compare, mc_scores, mgf_check as core_mgf_check};
use ida_core::scoring::{decide_with_priors, log_softmax_prob as core_log_softmax_prob, IdaScorer, ScoringOptions};
use ida_core::stats::{estimate_stats, merge_stats, regularize};
use ida_core::synthetic::{empirical_priors as core_empirical_priors, generate_task as core_generate_task, SyntheticSpec};
use ida_core::{ClassPriors, ClassifierHead, DemoStats, Error, FeatureVector};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyOSError::new_err(io.to_string()),
        e if e.is_numeric() => PyArithmeticError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn feature(v: Vec<f64>) -> PyResult<FeatureVector> {
    FeatureVector::new(v).map_err(to_py)
}

fn features(rows: Vec<Vec<f64>>) -> PyResult<Vec<FeatureVector>> {
    rows.into_iter().map(feature).collect()
}

fn rows_of(flat: &[f64], cols: usize) -> Vec<Vec<f64>> {
    flat.chunks_exact(cols).map(<[f64]>::to_vec).collect()
}

fn options(restrict_candidates: bool, diagonal_cov: bool) -> ScoringOptions {
    ScoringOptions {
        restrict_candidates,
        diagonal_cov,
    }
}

/// Demonstration mean, population covariance and sample count.
#[pyclass(name = "DemoStats", module = "ida_calib", frozen, from_py_object)]
#[derive(Clone)]
struct PyDemoStats {
    inner: DemoStats,
}

#[pymethods]
impl PyDemoStats {
    #[new]
    fn new(mean: Vec<f64>, cov: Vec<Vec<f64>>, count: usize) -> PyResult<Self> {
        let flat: Vec<f64> = cov.into_iter().flatten().collect();
        Ok(Self {
            inner: DemoStats::new(mean, flat, count).map_err(to_py)?,
        })
    }

    /// Estimate from a list of feature rows.
    #[staticmethod]
    fn estimate(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Self {
            inner: estimate_stats(&features(rows)?).map_err(to_py)?,
        })
    }

    fn merge(&self, other: &PyDemoStats) -> PyResult<Self> {
        Ok(Self {
            inner: merge_stats(&self.inner, &other.inner).map_err(to_py)?,
        })
    }

    fn regularize(&self, eps: f64) -> PyResult<Self> {
        if !(eps.is_finite() && eps >= 0.0) {
            return Err(PyValueError::new_err(format!("eps must be non-negative, got {eps}")));
        }
        Ok(Self {
            inner: regularize(&self.inner, eps),
        })
    }

    #[getter]
    fn mean(&self) -> Vec<f64> {
        self.inner.mean().to_vec()
    }

    #[getter]
    fn cov(&self) -> Vec<Vec<f64>> {
        rows_of(self.inner.cov(), self.inner.dim())
    }

    #[getter]
    fn count(&self) -> usize {
        self.inner.count()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn trace(&self) -> f64 {
        self.inner.trace()
    }

    fn __repr__(&self) -> String {
        format!("DemoStats(dim={}, count={}, trace={:.6})", self.inner.dim(), self.inner.count(), self.inner.trace())
    }
}

/// Output layer: one weight row and bias per vocabulary token, plus the
/// candidate tokens in class order.
#[pyclass(name = "ClassifierHead", module = "ida_calib", frozen, from_py_object)]
#[derive(Clone)]
struct PyClassifierHead {
    inner: ClassifierHead,
}

#[pymethods]
impl PyClassifierHead {
    #[new]
    fn new(weights: Vec<Vec<f64>>, biases: Vec<f64>, candidates: Vec<usize>) -> PyResult<Self> {
        Ok(Self {
            inner: ClassifierHead::from_rows(weights, biases, candidates).map_err(to_py)?,
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    #[getter]
    fn candidates(&self) -> Vec<usize> {
        self.inner.candidates().to_vec()
    }

    #[getter]
    fn weights(&self) -> Vec<Vec<f64>> {
        rows_of(self.inner.weights(), self.inner.dim())
    }

    #[getter]
    fn biases(&self) -> Vec<f64> {
        self.inner.biases().to_vec()
    }

    fn logits(&self, h: Vec<f64>) -> PyResult<Vec<f64>> {
        let h = feature(h)?;
        h.expect_dim(self.inner.dim()).map_err(to_py)?;
        Ok(self.inner.logits(h.as_slice()))
    }

    fn __repr__(&self) -> String {
        format!(
            "ClassifierHead(dim={}, vocab_size={}, candidates={:?})",
            self.inner.dim(),
            self.inner.vocab_size(),
            self.inner.candidates()
        )
    }
}

/// Features, head, labels and optional stats as stored on disk.
#[pyclass(name = "Bundle", module = "ida_calib")]
struct PyBundle {
    inner: Bundle,
}

#[pymethods]
impl PyBundle {
    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: read_bundle(path).map_err(to_py)?,
        })
    }

    fn write(&self, path: &str) -> PyResult<()> {
        write_bundle(path, &self.inner).map_err(to_py)
    }

    #[getter]
    fn head(&self) -> PyClassifierHead {
        PyClassifierHead {
            inner: self.inner.head.clone(),
        }
    }

    #[getter]
    fn label_names(&self) -> Vec<String> {
        self.inner.label_names.clone()
    }

    #[getter]
    fn demo_features(&self) -> Vec<Vec<f64>> {
        self.inner.demo_features.iter().map(|f| f.as_slice().to_vec()).collect()
    }

    #[getter]
    fn query_features(&self) -> Vec<Vec<f64>> {
        self.inner.query_features.iter().map(|f| f.as_slice().to_vec()).collect()
    }

    #[getter]
    fn demo_labels(&self) -> Option<Vec<usize>> {
        self.inner.demo_labels.clone()
    }

    #[getter]
    fn query_labels(&self) -> Option<Vec<usize>> {
        self.inner.query_labels.clone()
    }

    #[getter]
    fn stats(&self) -> Option<PyDemoStats> {
        self.inner.stats.clone().map(|inner| PyDemoStats { inner })
    }

    #[setter]
    fn set_stats(&mut self, stats: Option<PyDemoStats>) -> PyResult<()> {
        if let Some(s) = &stats {
            if s.inner.dim() != self.inner.dim() {
                return Err(PyValueError::new_err(format!(
                    "stats dim {} does not match bundle dim {}",
                    s.inner.dim(),
                    self.inner.dim()
                )));
            }
        }
        self.inner.stats = stats.map(|s| s.inner);
        Ok(())
    }

    fn __repr__(&self) -> String {
        format!(
            "Bundle(dim={}, classes={}, n_demos={}, n_queries={})",
            self.inner.dim(),
            self.inner.num_classes(),
            self.inner.demo_features.len(),
            self.inner.query_features.len()
        )
    }
}

/// `log softmax(W h + b)[token]`.
#[pyfunction]
fn log_softmax_prob(head: &PyClassifierHead, h: Vec<f64>, token: usize) -> PyResult<f64> {
    core_log_softmax_prob(&head.inner, &feature(h)?, token).map_err(to_py)
}

/// Closed-form log-scores of every candidate for one query (lower is better).
#[pyfunction]
#[pyo3(signature = (head, h, stats, lam=0.5, restrict_candidates=false, diagonal_cov=false))]
fn ida_scores(
    head: &PyClassifierHead,
    h: Vec<f64>,
    stats: &PyDemoStats,
    lam: f64,
    restrict_candidates: bool,
    diagonal_cov: bool,
) -> PyResult<Vec<f64>> {
    let scorer = IdaScorer::new(&head.inner, &stats.inner, lam, options(restrict_candidates, diagonal_cov)).map_err(to_py)?;
    Ok(scorer.scores(&feature(h)?).map_err(to_py)?.into_inner())
}

/// Scores and decides a batch of queries. Returns a list of dicts with
/// `log_scores`, `adjusted_log_scores`, `decision` and `saturated`.
#[pyfunction]
#[pyo3(signature = (head, queries, stats, priors=None, lam=0.5, tau=1.0, restrict_candidates=false, diagonal_cov=false))]
#[allow(clippy::too_many_arguments)]
fn predict<'py>(
    py: Python<'py>,
    head: &PyClassifierHead,
    queries: Vec<Vec<f64>>,
    stats: &PyDemoStats,
    priors: Option<Vec<f64>>,
    lam: f64,
    tau: f64,
    restrict_candidates: bool,
    diagonal_cov: bool,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(PyValueError::new_err(format!("tau must be non-negative, got {tau}")));
    }
    let priors = match priors {
        Some(p) => ClassPriors::new(p).map_err(to_py)?,
        None => ClassPriors::uniform(head.inner.num_candidates()).map_err(to_py)?,
    };
    let scorer = IdaScorer::new(&head.inner, &stats.inner, lam, options(restrict_candidates, diagonal_cov)).map_err(to_py)?;
    queries
        .into_iter()
        .map(|q| {
            let scores = scorer.scores(&feature(q)?).map_err(to_py)?;
            let p = decide_with_priors(&scores, &priors, tau).map_err(to_py)?;
            let d = PyDict::new(py);
            d.set_item("log_scores", p.log_scores)?;
            d.set_item("adjusted_log_scores", p.adjusted_log_scores)?;
            d.set_item("decision", p.decision)?;
            d.set_item("saturated", p.saturated)?;
            Ok(d)
        })
        .collect()
}

/// Monte-Carlo estimate of the expected inverse probabilities next to the
/// closed form. Returns a dict with per-candidate `estimate`, `stderr`,
/// `closed_form` and `z_gap` lists plus the `decision`.
#[pyfunction]
#[pyo3(signature = (head, h, stats, lam=0.5, m=100_000, seed=0, restrict_candidates=false))]
#[allow(clippy::too_many_arguments)]
fn oracle<'py>(
    py: Python<'py>,
    head: &PyClassifierHead,
    h: Vec<f64>,
    stats: &PyDemoStats,
    lam: f64,
    m: usize,
    seed: u64,
    restrict_candidates: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let opts = options(restrict_candidates, false);
    let h = feature(h)?;
    let (report, rows) = py
        .detach(|| -> ida_core::Result<_> {
            let report = mc_scores(&head.inner, &h, &stats.inner, lam, m, seed, opts)?;
            let closed = IdaScorer::new(&head.inner, &stats.inner, lam, opts)?.scores(&h)?;
            let rows = compare(&report, &closed)?;
            Ok((report, rows))
        })
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("estimate", rows.iter().map(|r| r.estimate).collect::<Vec<_>>())?;
    d.set_item("stderr", rows.iter().map(|r| r.stderr).collect::<Vec<_>>())?;
    d.set_item("closed_form", rows.iter().map(|r| r.closed_form).collect::<Vec<_>>())?;
    d.set_item("z_gap", rows.iter().map(|r| r.z_gap).collect::<Vec<_>>())?;
    d.set_item("decision", report.decision)?;
    d.set_item("m", report.m)?;
    d.set_item("seed", report.seed)?;
    Ok(d)
}

/// `(mc_mean, std_error, analytic)` for `E[exp(tX)]`, `X ~ N(mu, sigma2)`.
#[pyfunction]
#[pyo3(signature = (t, mu, sigma2, m=1_000_000, seed=0))]
fn mgf_check(py: Python<'_>, t: f64, mu: f64, sigma2: f64, m: usize, seed: u64) -> PyResult<(f64, Option<f64>, f64)> {
    let r = py.detach(|| core_mgf_check(t, mu, sigma2, m, seed)).map_err(to_py)?;
    Ok((r.mc_mean, r.std_error, r.analytic))
}

#[pyfunction]
fn empirical_priors(labels: Vec<usize>, num_classes: usize) -> PyResult<Vec<f64>> {
    Ok(core_empirical_priors(&labels, num_classes).map_err(to_py)?.probs().to_vec())
}

/// Accuracy, macro-F1, confusion matrix (rows = truth) and per-class recall.
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, preds: Vec<usize>, truths: Vec<usize>, num_classes: usize) -> PyResult<Bound<'py, PyDict>> {
    let r = ida_core::evaluate(&preds, &truths, num_classes).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("n", r.n)?;
    d.set_item("accuracy", r.accuracy)?;
    d.set_item("macro_f1", r.macro_f1)?;
    d.set_item("confusion", r.confusion)?;
    d.set_item("recall", r.per_class.iter().map(|c| c.recall).collect::<Vec<_>>())?;
    d.set_item("f1", r.per_class.iter().map(|c| c.f1).collect::<Vec<_>>())?;
    Ok(d)
}

/// Builds a synthetic task bundle; see `SyntheticSpec` in the Rust crate.
#[pyfunction]
#[pyo3(signature = (class_means, demo_priors, n_demos, n_queries, shared_cov_scale=1.0, head_noise=0.0, seed=0, context_mix=0.0, extra_vocab=0))]
#[allow(clippy::too_many_arguments)]
fn generate_task(
    class_means: Vec<Vec<f64>>,
    demo_priors: Vec<f64>,
    n_demos: usize,
    n_queries: usize,
    shared_cov_scale: f64,
    head_noise: f64,
    seed: u64,
    context_mix: f64,
    extra_vocab: usize,
) -> PyResult<PyBundle> {
    let spec = SyntheticSpec {
        dim: class_means.first().map_or(0, Vec::len),
        num_classes: class_means.len(),
        class_means,
        shared_cov_scale,
        demo_priors,
        n_demos,
        n_queries,
        head_noise,
        seed,
        context_mix,
        extra_vocab,
    };
    Ok(PyBundle {
        inner: core_generate_task(&spec).map_err(to_py)?,
    })
}

#[pymodule]
fn ida_calib(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DEFAULT_LAMBDA", ida_core::types::DEFAULT_LAMBDA)?;
    m.add("DEFAULT_TAU", ida_core::types::DEFAULT_TAU)?;
    m.add_class::<PyDemoStats>()?;
    m.add_class::<PyClassifierHead>()?;
    m.add_class::<PyBundle>()?;
    m.add_function(wrap_pyfunction!(log_softmax_prob, m)?)?;
    m.add_function(wrap_pyfunction!(ida_scores, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(oracle, m)?)?;
    m.add_function(wrap_pyfunction!(mgf_check, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_priors, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(generate_task, m)?)?;
    Ok(())
}
