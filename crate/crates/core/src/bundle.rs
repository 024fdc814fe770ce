//! On-disk bundle: a directory with `manifest.json` plus headerless
//! little-endian `f32` arrays.
//!
//! ```text
//! bundle/
//!   manifest.json         format_version = 1, shapes, candidates, names, files{}
//!   demo_features.f32     n_demos × dim
//!   query_features.f32    n_queries × dim
//!   head_weights.f32      vocab_size × dim
//!   head_biases.f32       vocab_size
//!   demo_labels.f32       n_demos            (optional)
//!   query_labels.f32      n_queries          (optional)
//!   stats_mean.f32        dim                (optional, with stats_cov)
//!   stats_cov.f32         dim × dim          (optional, with stats_mean)
//! ```
//!
//! Every array is row-major with no header; its byte length must be exactly
//! `rows × cols × 4`. Labels are stored as integral `f32` values. Manifest
//! keys are written in sorted order so that write → read → write is
//! byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::types::{ClassifierHead, DemoStats, FeatureVector};

pub const FORMAT_VERSION: u64 = 1;
pub const MANIFEST: &str = "manifest.json";

/// PSD tolerance for covariances read back from 32-bit storage.
const STORED_COV_PSD_TOL: f64 = 1e-6;

const DEMO_FEATURES: &str = "demo_features";
const QUERY_FEATURES: &str = "query_features";
const HEAD_WEIGHTS: &str = "head_weights";
const HEAD_BIASES: &str = "head_biases";
const DEMO_LABELS: &str = "demo_labels";
const QUERY_LABELS: &str = "query_labels";
const STATS_MEAN: &str = "stats_mean";
const STATS_COV: &str = "stats_cov";

/// `manifest.json`. Field order is the serialized key order (sorted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub candidates: Vec<usize>,
    pub dim: usize,
    pub files: BTreeMap<String, String>,
    pub format_version: u64,
    pub label_names: Vec<String>,
    pub n_demos: usize,
    pub n_queries: usize,
    pub num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats_count: Option<usize>,
    pub vocab_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub label_names: Vec<String>,
    pub demo_features: Vec<FeatureVector>,
    pub query_features: Vec<FeatureVector>,
    pub head: ClassifierHead,
    /// Class indices (positions in `head.candidates()`).
    pub demo_labels: Option<Vec<usize>>,
    pub query_labels: Option<Vec<usize>>,
    pub stats: Option<DemoStats>,
}

impl Bundle {
    pub fn dim(&self) -> usize {
        self.head.dim()
    }

    pub fn num_classes(&self) -> usize {
        self.head.num_candidates()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let c = self.num_classes();
        if self.label_names.len() != c {
            return Err(Error::bundle(
                "label_names",
                format!("{} names for {c} classes", self.label_names.len()),
            ));
        }
        for (field, feats) in [(DEMO_FEATURES, &self.demo_features), (QUERY_FEATURES, &self.query_features)] {
            if let Some(f) = feats.iter().find(|f| f.dim() != d) {
                return Err(Error::bundle(field, format!("row of length {} for dim {d}", f.dim())));
            }
        }
        for (field, labels, n) in [
            (DEMO_LABELS, &self.demo_labels, self.demo_features.len()),
            (QUERY_LABELS, &self.query_labels, self.query_features.len()),
        ] {
            if let Some(labels) = labels {
                if labels.len() != n {
                    return Err(Error::bundle(field, format!("{} labels for {n} rows", labels.len())));
                }
                if let Some(bad) = labels.iter().find(|&&l| l >= c) {
                    return Err(Error::bundle(field, format!("label {bad} >= num_classes {c}")));
                }
            }
        }
        if let Some(s) = &self.stats {
            if s.dim() != d {
                return Err(Error::bundle(STATS_MEAN, format!("stats dim {} for dim {d}", s.dim())));
            }
        }
        Ok(())
    }

    pub fn manifest(&self) -> Manifest {
        let mut files = BTreeMap::new();
        let mut add = |key: &str| {
            files.insert(key.to_string(), format!("{key}.f32"));
        };
        add(DEMO_FEATURES);
        add(QUERY_FEATURES);
        add(HEAD_WEIGHTS);
        add(HEAD_BIASES);
        if self.demo_labels.is_some() {
            add(DEMO_LABELS);
        }
        if self.query_labels.is_some() {
            add(QUERY_LABELS);
        }
        if self.stats.is_some() {
            add(STATS_MEAN);
            add(STATS_COV);
        }
        Manifest {
            candidates: self.head.candidates().to_vec(),
            dim: self.dim(),
            files,
            format_version: FORMAT_VERSION,
            label_names: self.label_names.clone(),
            n_demos: self.demo_features.len(),
            n_queries: self.query_features.len(),
            num_classes: self.num_classes(),
            stats_count: self.stats.as_ref().map(DemoStats::count),
            vocab_size: self.head.vocab_size(),
        }
    }
}

/// Little-endian `f32` encoding of `values` (rounded from `f64`).
pub fn encode_f32(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    values.into_iter().flat_map(|v| (v as f32).to_le_bytes()).collect()
}

fn decode_f32(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect()
}

fn rows_bytes(rows: &[FeatureVector]) -> Vec<u8> {
    encode_f32(rows.iter().flat_map(|r| r.as_slice().iter().copied()))
}

fn labels_bytes(labels: &[usize]) -> Vec<u8> {
    encode_f32(labels.iter().map(|&l| l as f64))
}

pub fn write_bundle(path: impl AsRef<Path>, bundle: &Bundle) -> Result<()> {
    bundle.validate()?;
    let dir = path.as_ref();
    fs::create_dir_all(dir)?;
    let manifest = bundle.manifest();
    let mut payloads: Vec<(&str, Vec<u8>)> = vec![
        (DEMO_FEATURES, rows_bytes(&bundle.demo_features)),
        (QUERY_FEATURES, rows_bytes(&bundle.query_features)),
        (HEAD_WEIGHTS, encode_f32(bundle.head.weights().iter().copied())),
        (HEAD_BIASES, encode_f32(bundle.head.biases().iter().copied())),
    ];
    if let Some(l) = &bundle.demo_labels {
        payloads.push((DEMO_LABELS, labels_bytes(l)));
    }
    if let Some(l) = &bundle.query_labels {
        payloads.push((QUERY_LABELS, labels_bytes(l)));
    }
    if let Some(s) = &bundle.stats {
        payloads.push((STATS_MEAN, encode_f32(s.mean().iter().copied())));
        payloads.push((STATS_COV, encode_f32(s.cov().iter().copied())));
    }
    for (key, bytes) in payloads {
        fs::write(dir.join(&manifest.files[key]), bytes)?;
    }
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    fs::write(dir.join(MANIFEST), json)?;
    Ok(())
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, key: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| Error::bundle(key, "missing"))
}

fn usize_field(obj: &serde_json::Map<String, Value>, key: &str) -> Result<usize> {
    field(obj, key)?
        .as_u64()
        .map(|v| v as usize)
        .ok_or_else(|| Error::bundle(key, "expected a non-negative integer"))
}

fn parse_manifest(text: &str) -> Result<Manifest> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::bundle("manifest", e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::bundle("manifest", "expected a JSON object"))?;
    let version = field(obj, "format_version")?
        .as_u64()
        .ok_or_else(|| Error::bundle("format_version", "expected an integer"))?;
    if version != FORMAT_VERSION {
        return Err(Error::bundle("format_version", format!("unsupported version {version}")));
    }
    let candidates = field(obj, "candidates")?
        .as_array()
        .and_then(|a| a.iter().map(|v| v.as_u64().map(|x| x as usize)).collect::<Option<Vec<_>>>())
        .ok_or_else(|| Error::bundle("candidates", "expected an array of token indices"))?;
    let label_names = field(obj, "label_names")?
        .as_array()
        .and_then(|a| a.iter().map(|v| v.as_str().map(str::to_string)).collect::<Option<Vec<_>>>())
        .ok_or_else(|| Error::bundle("label_names", "expected an array of strings"))?;
    let files = field(obj, "files")?
        .as_object()
        .ok_or_else(|| Error::bundle("files", "expected an object"))?
        .iter()
        .map(|(k, v)| {
            v.as_str()
                .map(|s| (k.clone(), s.to_string()))
                .ok_or_else(|| Error::bundle(format!("files.{k}"), "expected a file name"))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    let stats_count = match obj.get("stats_count") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            v.as_u64()
                .ok_or_else(|| Error::bundle("stats_count", "expected a positive integer"))? as usize,
        ),
    };
    Ok(Manifest {
        candidates,
        dim: usize_field(obj, "dim")?,
        files,
        format_version: version,
        label_names,
        n_demos: usize_field(obj, "n_demos")?,
        n_queries: usize_field(obj, "n_queries")?,
        num_classes: usize_field(obj, "num_classes")?,
        stats_count,
        vocab_size: usize_field(obj, "vocab_size")?,
    })
}

/// Reads one array after checking its on-disk length against the shape
/// declared in the manifest.
fn read_array(dir: &Path, manifest: &Manifest, key: &str, rows: usize, cols: usize) -> Result<Vec<f64>> {
    let field_name = format!("files.{key}");
    let name = manifest
        .files
        .get(key)
        .ok_or_else(|| Error::bundle(&field_name, "missing entry"))?;
    if name.contains('/') || name.contains('\\') || name == ".." {
        return Err(Error::bundle(&field_name, "file names must be plain names inside the bundle"));
    }
    let path = dir.join(name);
    let meta = fs::metadata(&path).map_err(|e| Error::bundle(&field_name, format!("{}: {e}", path.display())))?;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::bundle(key, "declared shape overflows"))?;
    if meta.len() != expected as u64 {
        return Err(Error::bundle(
            &field_name,
            format!("size {} bytes, expected {rows}×{cols}×4 = {expected}", meta.len()),
        ));
    }
    let bytes = fs::read(&path)?;
    let values = decode_f32(&bytes);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::bundle(key, "non-finite value"));
    }
    Ok(values)
}

fn to_rows(values: Vec<f64>, cols: usize) -> Vec<FeatureVector> {
    if cols == 0 {
        return Vec::new();
    }
    values
        .chunks_exact(cols)
        .map(|r| FeatureVector::new(r.to_vec()).expect("finite checked on read"))
        .collect()
}

fn to_labels(values: Vec<f64>, num_classes: usize, key: &str) -> Result<Vec<usize>> {
    values
        .into_iter()
        .map(|v| {
            if v.fract() != 0.0 || v < 0.0 {
                Err(Error::bundle(key, format!("label {v} is not a class index")))
            } else if v as usize >= num_classes {
                Err(Error::bundle(key, format!("label {v} >= num_classes {num_classes}")))
            } else {
                Ok(v as usize)
            }
        })
        .collect()
}

/// Manifest only, without touching the arrays.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let manifest_path = path.as_ref().join(MANIFEST);
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::bundle("manifest", format!("{}: {e}", manifest_path.display())))?;
    parse_manifest(&text)
}

pub fn read_bundle(path: impl AsRef<Path>) -> Result<Bundle> {
    let dir = path.as_ref();
    let m = read_manifest(dir)?;
    if m.dim == 0 {
        return Err(Error::bundle("dim", "must be positive"));
    }
    if m.candidates.len() != m.num_classes {
        return Err(Error::bundle(
            "candidates",
            format!("{} candidates for num_classes {}", m.candidates.len(), m.num_classes),
        ));
    }
    if m.label_names.len() != m.num_classes {
        return Err(Error::bundle(
            "label_names",
            format!("{} names for num_classes {}", m.label_names.len(), m.num_classes),
        ));
    }

    let weights = read_array(dir, &m, HEAD_WEIGHTS, m.vocab_size, m.dim)?;
    let biases = read_array(dir, &m, HEAD_BIASES, m.vocab_size, 1)?;
    let head = ClassifierHead::new(weights, biases, m.candidates.clone(), m.dim).map_err(|e| match e {
        Error::CandidateOutOfRange { .. } | Error::DuplicateCandidate(_) | Error::InvalidValue { .. } => {
            Error::bundle("candidates", e.to_string())
        }
        other => Error::bundle(HEAD_WEIGHTS, other.to_string()),
    })?;
    let demo_features = to_rows(read_array(dir, &m, DEMO_FEATURES, m.n_demos, m.dim)?, m.dim);
    let query_features = to_rows(read_array(dir, &m, QUERY_FEATURES, m.n_queries, m.dim)?, m.dim);

    let demo_labels = if m.files.contains_key(DEMO_LABELS) {
        let raw = read_array(dir, &m, DEMO_LABELS, m.n_demos, 1)?;
        Some(to_labels(raw, m.num_classes, DEMO_LABELS)?)
    } else {
        None
    };
    let query_labels = if m.files.contains_key(QUERY_LABELS) {
        let raw = read_array(dir, &m, QUERY_LABELS, m.n_queries, 1)?;
        Some(to_labels(raw, m.num_classes, QUERY_LABELS)?)
    } else {
        None
    };

    let stats = match (m.files.contains_key(STATS_MEAN), m.files.contains_key(STATS_COV)) {
        (false, false) => None,
        (true, true) => {
            let count = m
                .stats_count
                .filter(|&c| c > 0)
                .ok_or_else(|| Error::bundle("stats_count", "required and positive when stats are present"))?;
            let mean = read_array(dir, &m, STATS_MEAN, m.dim, 1)?;
            let cov = read_array(dir, &m, STATS_COV, m.dim, m.dim)?;
            Some(
                DemoStats::with_psd_tolerance(mean, cov, count, STORED_COV_PSD_TOL)
                    .map_err(|e| Error::bundle(STATS_COV, e.to_string()))?,
            )
        }
        (true, false) => return Err(Error::bundle("files.stats_cov", "missing entry")),
        (false, true) => return Err(Error::bundle("files.stats_mean", "missing entry")),
    };

    let bundle = Bundle {
        label_names: m.label_names,
        demo_features,
        query_features,
        head,
        demo_labels,
        query_labels,
        stats,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Rounds every value to 32-bit precision, giving the bundle exactly the
/// contents it will have after a write/read cycle.
pub fn quantize(values: &mut [f64]) {
    values.iter_mut().for_each(|v| *v = *v as f32 as f64);
}
