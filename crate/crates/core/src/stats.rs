//! Demonstration feature statistics: mean and population covariance.
//!
//! Estimation is chunked: each chunk is summarised with an exact two-pass
//! computation and the summaries are combined with the pairwise update of
//! Chan, Golub and LeVeque. Chunks are merged in input order so the result
//! does not depend on the worker count.

use std::collections::HashSet;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{DemoStats, FeatureVector};

const CHUNK: usize = 512;

fn two_pass(rows: &[&[f64]]) -> DemoStats {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(*r) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);

    let mut cov = vec![0.0; d * d];
    let mut dev = vec![0.0; d];
    for r in rows {
        for ((e, x), m) in dev.iter_mut().zip(*r).zip(&mean) {
            *e = x - m;
        }
        for i in 0..d {
            let di = dev[i];
            let row = &mut cov[i * d..i * d + d];
            for j in i..d {
                row[j] += di * dev[j];
            }
        }
    }
    finish_upper(&mut cov, d, n);
    DemoStats::from_parts_unchecked(mean, cov, rows.len())
}

/// Scales the accumulated upper triangle by `1/n` and mirrors it.
fn finish_upper(cov: &mut [f64], d: usize, n: f64) {
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / n;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
}

/// Mean and population (`1/N`) covariance of the demonstration features.
pub fn estimate_stats(features: &[FeatureVector]) -> Result<DemoStats> {
    let first = features
        .first()
        .ok_or_else(|| Error::EmptyInput("no demonstration features".into()))?;
    let d = first.dim();
    if d == 0 {
        return Err(Error::EmptyInput("zero-dimensional features".into()));
    }
    for f in features {
        f.expect_dim(d)?;
    }
    let rows: Vec<&[f64]> = features.iter().map(FeatureVector::as_slice).collect();
    if rows.len() <= CHUNK {
        return Ok(two_pass(&rows));
    }
    let partials: Vec<DemoStats> = rows.par_chunks(CHUNK).map(two_pass).collect();
    let mut iter = partials.into_iter();
    let mut acc = iter.next().expect("at least one chunk");
    for part in iter {
        acc = merge_stats(&acc, &part)?;
    }
    Ok(acc)
}

/// Combines statistics of two disjoint sample sets.
pub fn merge_stats(a: &DemoStats, b: &DemoStats) -> Result<DemoStats> {
    let d = a.dim();
    if b.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: b.dim(),
        });
    }
    let (na, nb) = (a.count() as f64, b.count() as f64);
    let n = na + nb;
    let delta: Vec<f64> = b.mean().iter().zip(a.mean()).map(|(mb, ma)| mb - ma).collect();
    let mean: Vec<f64> = a
        .mean()
        .iter()
        .zip(&delta)
        .map(|(ma, dl)| ma + dl * (nb / n))
        .collect();
    let cross = na * nb / n;
    let mut cov = vec![0.0; d * d];
    for i in 0..d {
        for j in i..d {
            let idx = i * d + j;
            cov[idx] = a.cov()[idx] * na + b.cov()[idx] * nb + delta[i] * delta[j] * cross;
        }
    }
    finish_upper(&mut cov, d, n);
    Ok(DemoStats::from_parts_unchecked(mean, cov, a.count() + b.count()))
}

/// Symmetrises the covariance and adds a ridge of `eps · trace(Σ)/d`.
pub fn regularize(stats: &DemoStats, eps: f64) -> DemoStats {
    let d = stats.dim();
    let ridge = eps * stats.trace() / d as f64;
    let src = stats.cov();
    let mut cov = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            cov[i * d + j] = 0.5 * (src[i * d + j] + src[j * d + i]);
        }
        cov[i * d + i] += ridge;
    }
    DemoStats::from_parts_unchecked(stats.mean().to_vec(), cov, stats.count())
}

/// Drops bitwise-identical repeats, keeping the first occurrence.
pub fn dedup_features(features: &[FeatureVector]) -> Vec<FeatureVector> {
    let mut seen = HashSet::new();
    features
        .iter()
        .filter(|f| seen.insert(f.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>()))
        .cloned()
        .collect()
}
