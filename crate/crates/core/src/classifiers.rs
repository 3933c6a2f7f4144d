//! Nearest-neighbour classifiers over feature vectors (Euclidean) and raw
//! multivariate series (dynamic time warping).
//!
//! DTW comes in two flavours for 13-channel series:
//! * dependent — one warping path shared by all channels, local cost is the
//!   pointwise Euclidean distance across channels (not squared);
//! * independent — each channel is warped on its own with absolute-difference
//!   local cost and the per-channel distances are summed.
//!
//! Both accept an optional Sakoe-Chiba band `|i - j| <= r`; an infeasible
//! radius (smaller than the length difference) is widened to `|n - m|` and
//! reported. Raw-series models z-normalize every channel with statistics
//! frozen from the training references so queries never influence the scale.

use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::data::Sample;
use crate::io::{fmt_g17, parse_f64};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// DTW
// ---------------------------------------------------------------------------

/// How a multivariate series is warped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DtwMode {
    /// One shared path, pointwise Euclidean local cost across channels.
    Dependent,
    /// Per-channel scalar DTW, distances summed.
    Independent,
}

impl DtwMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DtwMode::Dependent => "dependent",
            DtwMode::Independent => "independent",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dependent" => Ok(DtwMode::Dependent),
            "independent" => Ok(DtwMode::Independent),
            other => Err(Error::invalid(format!("unknown DTW mode '{other}'"))),
        }
    }
}

/// Returns the usable band radius for lengths `n`, `m` and whether the
/// requested radius had to be widened to keep the end cell reachable.
pub fn effective_band(n: usize, m: usize, band: Option<usize>) -> (Option<usize>, bool) {
    match band {
        None => (None, false),
        Some(r) => {
            let gap = n.abs_diff(m);
            if r < gap {
                (Some(gap), true)
            } else {
                (Some(r), false)
            }
        }
    }
}

/// Banded two-row DP over the classic recurrence
/// `D(i,j) = cost(i,j) + min(D(i-1,j), D(i,j-1), D(i-1,j-1))`.
/// `band` must already be feasible (`>= |n - m|`).
fn dtw_core(n: usize, m: usize, band: Option<usize>, cost: impl Fn(usize, usize) -> f64) -> f64 {
    debug_assert!(n > 0 && m > 0);
    let radius = band.unwrap_or(usize::MAX);
    let mut prev = vec![f64::INFINITY; m];
    let mut curr = vec![f64::INFINITY; m];
    for i in 0..n {
        curr.fill(f64::INFINITY);
        let jlo = i.saturating_sub(radius);
        let jhi = i.saturating_add(radius).min(m - 1);
        for j in jlo..=jhi {
            let mut best = f64::INFINITY;
            if i > 0 {
                best = best.min(prev[j]);
            }
            if j > 0 {
                best = best.min(curr[j - 1]);
                if i > 0 {
                    best = best.min(prev[j - 1]);
                }
            }
            if i == 0 && j == 0 {
                best = 0.0;
            }
            curr[j] = cost(i, j) + best;
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[m - 1]
}

/// Validates a channel-major series: equal non-zero channel lengths.
fn series_len<S: AsRef<[f64]>>(series: &[S], which: &str) -> Result<usize> {
    let first = series
        .first()
        .ok_or_else(|| Error::invalid(format!("{which} series has no channels")))?;
    let len = first.as_ref().len();
    if len == 0 {
        return Err(Error::invalid(format!("{which} series has empty channels")));
    }
    for (c, ch) in series.iter().enumerate() {
        if ch.as_ref().len() != len {
            return Err(Error::invalid(format!(
                "{which} series channel {c} has length {}, expected {len}",
                ch.as_ref().len()
            )));
        }
    }
    Ok(len)
}

/// DTW distance between two channel-major series (`series[channel][t]`).
/// Returns the distance and whether the band was widened to `|n - m|`.
/// The two series must have the same number of channels.
pub fn dtw_distance<S: AsRef<[f64]>>(
    a: &[S],
    b: &[S],
    mode: DtwMode,
    band: Option<usize>,
) -> Result<(f64, bool)> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "series have different channel counts: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = series_len(a, "first")?;
    let m = series_len(b, "second")?;
    let (band, widened) = effective_band(n, m, band);
    let distance = match mode {
        DtwMode::Dependent => dtw_core(n, m, band, |i, j| {
            let mut acc = 0.0;
            for (ca, cb) in a.iter().zip(b) {
                let d = ca.as_ref()[i] - cb.as_ref()[j];
                acc += d * d;
            }
            acc.sqrt()
        }),
        DtwMode::Independent => a
            .iter()
            .zip(b)
            .map(|(ca, cb)| {
                let xa = ca.as_ref();
                let xb = cb.as_ref();
                dtw_core(n, m, band, |i, j| (xa[i] - xb[j]).abs())
            })
            .sum(),
    };
    Ok((distance, widened))
}

// ---------------------------------------------------------------------------
// Class probabilities
// ---------------------------------------------------------------------------

/// A probability vector over classes; entries are finite, non-negative, and
/// sum to 1 within 1e-9.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbabilities(Vec<f64>);

impl ClassProbabilities {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("probability vector must not be empty"));
        }
        if probs.iter().any(|&p| !p.is_finite() || p < 0.0) {
            return Err(Error::invalid(
                "probability vector entries must be finite and non-negative",
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "probability vector sums to {sum}, expected 1"
            )));
        }
        Ok(ClassProbabilities(probs))
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

    /// Index of the most probable class; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0usize;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

// ---------------------------------------------------------------------------
// Nearest-neighbour model
// ---------------------------------------------------------------------------

/// Distance used by a [`NeighborModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Euclidean distance between feature vectors.
    Euclidean,
    /// DTW between raw series; `band` is the Sakoe-Chiba radius.
    Dtw { mode: DtwMode, band: Option<usize> },
}

/// Per-channel z-normalization frozen from the training references.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesNorm {
    pub mean: Vec<f64>,
    /// `1 / std`; zero-variance channels get 0 so they collapse to constant 0.
    pub inv_std: Vec<f64>,
}

impl SeriesNorm {
    /// Pools every frame of every training series per channel.
    fn fit(series: &[Vec<Vec<f64>>]) -> SeriesNorm {
        let channels = series.first().map_or(0, |s| s.len());
        let mut mean = vec![0.0; channels];
        let mut count = vec![0usize; channels];
        for s in series {
            for (c, ch) in s.iter().enumerate() {
                mean[c] += ch.iter().sum::<f64>();
                count[c] += ch.len();
            }
        }
        for (m, &k) in mean.iter_mut().zip(&count) {
            *m /= k as f64;
        }
        let mut var = vec![0.0; channels];
        for s in series {
            for (c, ch) in s.iter().enumerate() {
                var[c] += ch.iter().map(|&v| (v - mean[c]) * (v - mean[c])).sum::<f64>();
            }
        }
        let inv_std = var
            .iter()
            .zip(&count)
            .map(|(&v, &k)| {
                let std = (v / k as f64).sqrt();
                if std > 0.0 {
                    1.0 / std
                } else {
                    0.0
                }
            })
            .collect();
        SeriesNorm { mean, inv_std }
    }

    fn apply(&self, series: &[Vec<f64>]) -> Vec<Vec<f64>> {
        series
            .iter()
            .enumerate()
            .map(|(c, ch)| {
                ch.iter()
                    .map(|&v| (v - self.mean[c]) * self.inv_std[c])
                    .collect()
            })
            .collect()
    }
}

/// Stored references: feature vectors or channel-major raw series.
#[derive(Debug, Clone, PartialEq)]
enum RefStore {
    Vectors(Vec<Vec<f64>>),
    /// Already normalized when a [`SeriesNorm`] is present.
    Series(Vec<Vec<Vec<f64>>>),
}

/// k-nearest-neighbour classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborModel {
    k: usize,
    metric: Metric,
    n_classes: usize,
    labels: Vec<usize>,
    refs: RefStore,
    norm: Option<SeriesNorm>,
}

fn check_fit_args(n_refs: usize, labels: &[usize], n_classes: usize, k: usize) -> Result<()> {
    if n_refs == 0 {
        return Err(Error::invalid("k-NN fit requires at least one reference"));
    }
    if labels.len() != n_refs {
        return Err(Error::invalid(format!(
            "got {} labels for {} references",
            labels.len(),
            n_refs
        )));
    }
    if n_classes == 0 {
        return Err(Error::invalid("k-NN fit requires at least one class"));
    }
    if let Some(&bad) = labels.iter().find(|&&c| c >= n_classes) {
        return Err(Error::invalid(format!(
            "label index {bad} is out of range for {n_classes} classes"
        )));
    }
    if k == 0 || k > n_refs {
        return Err(Error::invalid(format!(
            "k must be in 1..={n_refs}, got {k}"
        )));
    }
    Ok(())
}

/// Fits a Euclidean k-NN model on feature vectors.
pub fn knn_fit_vectors(
    rows: Vec<Vec<f64>>,
    labels: Vec<usize>,
    n_classes: usize,
    k: usize,
) -> Result<NeighborModel> {
    check_fit_args(rows.len(), &labels, n_classes, k)?;
    let width = rows[0].len();
    if width == 0 {
        return Err(Error::invalid("reference vectors must not be empty"));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(Error::invalid(format!(
                "reference {i} has {} features, expected {width}",
                row.len()
            )));
        }
    }
    Ok(NeighborModel {
        k,
        metric: Metric::Euclidean,
        n_classes,
        labels,
        refs: RefStore::Vectors(rows),
        norm: None,
    })
}

/// Fits a DTW k-NN model on raw samples. When `normalize` is set (the
/// default pipeline behaviour) every channel is z-normalized with statistics
/// pooled over the training references, and queries reuse those statistics.
pub fn knn_fit_series(
    samples: &[Sample],
    labels: Vec<usize>,
    n_classes: usize,
    k: usize,
    mode: DtwMode,
    band: Option<usize>,
    normalize: bool,
) -> Result<NeighborModel> {
    check_fit_args(samples.len(), &labels, n_classes, k)?;
    let series: Vec<Vec<Vec<f64>>> = samples
        .iter()
        .map(|s| s.channels().iter().map(|c| c.values.clone()).collect())
        .collect();
    let norm = normalize.then(|| SeriesNorm::fit(&series));
    let series = match &norm {
        Some(n) => series.iter().map(|s| n.apply(s)).collect(),
        None => series,
    };
    Ok(NeighborModel {
        k,
        metric: Metric::Dtw { mode, band },
        n_classes,
        labels,
        refs: RefStore::Series(series),
        norm,
    })
}

impl NeighborModel {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_refs(&self) -> usize {
        match &self.refs {
            RefStore::Vectors(v) => v.len(),
            RefStore::Series(s) => s.len(),
        }
    }

    pub fn norm(&self) -> Option<&SeriesNorm> {
        self.norm.as_ref()
    }

    /// Distances from one prepared query to every reference, in order.
    fn distances_to(&self, query: &Query) -> Vec<f64> {
        match (&self.refs, query) {
            (RefStore::Vectors(rows), Query::Vector(q)) => rows
                .iter()
                .map(|r| {
                    r.iter()
                        .zip(q.iter())
                        .map(|(&a, &b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect(),
            (RefStore::Series(series), Query::Series(q)) => {
                let (mode, band) = match self.metric {
                    Metric::Dtw { mode, band } => (mode, band),
                    Metric::Euclidean => unreachable!("vector metric with series refs"),
                };
                series
                    .iter()
                    .map(|r| {
                        dtw_distance(r, q, mode, band)
                            .expect("stored references and prepared queries are valid")
                            .0
                    })
                    .collect()
            }
            _ => unreachable!("query kind matches the reference store"),
        }
    }

    /// Vote fractions of the k nearest references. Distance ties are broken
    /// by reference index so results do not depend on sort internals.
    fn vote(&self, distances: &[f64]) -> ClassProbabilities {
        let mut order: Vec<usize> = (0..distances.len()).collect();
        order.sort_by(|&a, &b| {
            distances[a]
                .partial_cmp(&distances[b])
                .expect("finite distances")
                .then(a.cmp(&b))
        });
        let mut counts = vec![0usize; self.n_classes];
        for &idx in order.iter().take(self.k) {
            counts[self.labels[idx]] += 1;
        }
        let probs = counts
            .iter()
            .map(|&c| c as f64 / self.k as f64)
            .collect();
        ClassProbabilities::new(probs).expect("vote fractions sum to 1")
    }

    /// Predicts class probabilities for feature-vector queries.
    pub fn predict_vectors(&self, rows: &[Vec<f64>]) -> Result<Vec<ClassProbabilities>> {
        let width = match &self.refs {
            RefStore::Vectors(v) => v[0].len(),
            RefStore::Series(_) => {
                return Err(Error::invalid(
                    "this model classifies raw series, not feature vectors",
                ))
            }
        };
        for (i, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::invalid(format!(
                    "query {i} has {} features, model expects {width}",
                    row.len()
                )));
            }
        }
        let queries: Vec<Query> = rows.iter().map(|r| Query::Vector(r.clone())).collect();
        Ok(self.predict_prepared(&queries))
    }

    /// Predicts class probabilities for raw samples, applying the frozen
    /// training normalization when the model carries one. Also returns the
    /// number of queries whose band had to be widened.
    pub fn predict_samples(&self, samples: &[Sample]) -> Result<(Vec<ClassProbabilities>, usize)> {
        let (mode, band) = match self.metric {
            Metric::Dtw { mode, band } => (mode, band),
            Metric::Euclidean => {
                return Err(Error::invalid(
                    "this model classifies feature vectors, not raw series",
                ))
            }
        };
        let ref_series = match &self.refs {
            RefStore::Series(s) => s,
            RefStore::Vectors(_) => unreachable!("DTW metric implies series refs"),
        };
        let queries: Vec<Query> = samples
            .iter()
            .map(|s| {
                let series: Vec<Vec<f64>> =
                    s.channels().iter().map(|c| c.values.clone()).collect();
                Query::Series(match &self.norm {
                    Some(n) => n.apply(&series),
                    None => series,
                })
            })
            .collect();
        // Count widened bands once per query (against the longest gap).
        let mut widened = 0usize;
        if let Some(r) = band {
            for q in &queries {
                let qlen = match q {
                    Query::Series(s) => s[0].len(),
                    Query::Vector(_) => unreachable!(),
                };
                if ref_series
                    .iter()
                    .any(|rs| r < rs[0].len().abs_diff(qlen))
                {
                    widened += 1;
                }
            }
        }
        let _ = mode;
        Ok((self.predict_prepared(&queries), widened))
    }

    fn predict_prepared(&self, queries: &[Query]) -> Vec<ClassProbabilities> {
        queries
            .par_iter()
            .map(|q| self.vote(&self.distances_to(q)))
            .collect()
    }

    /// Full query-by-reference distance matrix (rows follow query order).
    pub fn distance_matrix(&self, samples: &[Sample]) -> Result<Vec<Vec<f64>>> {
        match self.metric {
            Metric::Dtw { .. } => {}
            Metric::Euclidean => {
                return Err(Error::invalid(
                    "distance matrices are computed for raw-series models",
                ))
            }
        }
        let queries: Vec<Query> = samples
            .iter()
            .map(|s| {
                let series: Vec<Vec<f64>> =
                    s.channels().iter().map(|c| c.values.clone()).collect();
                Query::Series(match &self.norm {
                    Some(n) => n.apply(&series),
                    None => series,
                })
            })
            .collect();
        Ok(queries
            .par_iter()
            .map(|q| self.distances_to(q))
            .collect())
    }

    /// Writes the model as text: a header naming the metric and shapes, the
    /// optional normalization rows, the label row, then the references.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = BufWriter::new(file);
        let (metric, mode, band) = match self.metric {
            Metric::Euclidean => ("euclidean", "-", String::from("-")),
            Metric::Dtw { mode, band } => (
                "dtw",
                mode.as_str(),
                band.map_or(String::from("none"), |b| b.to_string()),
            ),
        };
        let mut inner = || -> std::io::Result<()> {
            writeln!(
                w,
                "neighbor_model metric={} mode={} band={} k={} classes={} refs={} normalize={}",
                metric,
                mode,
                band,
                self.k,
                self.n_classes,
                self.n_refs(),
                if self.norm.is_some() { 1 } else { 0 }
            )?;
            if let Some(norm) = &self.norm {
                let mean: Vec<String> = norm.mean.iter().map(|&v| fmt_g17(v)).collect();
                writeln!(w, "{}", mean.join(","))?;
                let inv: Vec<String> = norm.inv_std.iter().map(|&v| fmt_g17(v)).collect();
                writeln!(w, "{}", inv.join(","))?;
            }
            let labels: Vec<String> = self.labels.iter().map(|l| l.to_string()).collect();
            writeln!(w, "{}", labels.join(","))?;
            match &self.refs {
                RefStore::Vectors(rows) => {
                    for row in rows {
                        let line: Vec<String> = row.iter().map(|&v| fmt_g17(v)).collect();
                        writeln!(w, "{}", line.join(","))?;
                    }
                }
                RefStore::Series(series) => {
                    for s in series {
                        writeln!(w, "series channels={} len={}", s.len(), s[0].len())?;
                        for ch in s {
                            let line: Vec<String> = ch.iter().map(|&v| fmt_g17(v)).collect();
                            writeln!(w, "{}", line.join(","))?;
                        }
                    }
                }
            }
            w.flush()
        };
        inner().map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let p = path.display().to_string();
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::Parse {
            path: p.clone(),
            line: 1,
            message: "empty model file".into(),
        })?;
        let mut tokens = header.split_whitespace();
        if tokens.next() != Some("neighbor_model") {
            return Err(Error::Parse {
                path: p,
                line: 1,
                message: "expected header tag 'neighbor_model'".into(),
            });
        }
        let mut fields = std::collections::HashMap::new();
        for token in tokens {
            let (k, v) = token.split_once('=').ok_or_else(|| Error::Parse {
                path: p.clone(),
                line: 1,
                message: format!("malformed header field '{token}'"),
            })?;
            fields.insert(k.to_string(), v.to_string());
        }
        let field = |key: &str| -> Result<String> {
            fields.get(key).cloned().ok_or_else(|| Error::Parse {
                path: p.clone(),
                line: 1,
                message: format!("header is missing field '{key}'"),
            })
        };
        let count = |key: &str| -> Result<usize> {
            let raw = field(key)?;
            raw.parse().map_err(|_| Error::Parse {
                path: p.clone(),
                line: 1,
                message: format!("header field '{key}' is not a count: '{raw}'"),
            })
        };
        let metric_name = field("metric")?;
        let k = count("k")?;
        let n_classes = count("classes")?;
        let n_refs = count("refs")?;
        let normalize = field("normalize")? == "1";
        let metric = match metric_name.as_str() {
            "euclidean" => Metric::Euclidean,
            "dtw" => {
                let mode = DtwMode::parse(&field("mode")?)?;
                let band_raw = field("band")?;
                let band = if band_raw == "none" {
                    None
                } else {
                    Some(band_raw.parse().map_err(|_| Error::Parse {
                        path: p.clone(),
                        line: 1,
                        message: format!("header field 'band' is invalid: '{band_raw}'"),
                    })?)
                };
                Metric::Dtw { mode, band }
            }
            other => {
                return Err(Error::Parse {
                    path: p,
                    line: 1,
                    message: format!("unknown metric '{other}'"),
                })
            }
        };

        let mut next_line = |what: &str| -> Result<(usize, String)> {
            lines
                .next()
                .map(|(i, l)| (i + 1, l.to_string()))
                .ok_or_else(|| Error::invalid(format!("model file {p} is missing {what}")))
        };
        let norm = if normalize {
            let (ln, mean_line) = next_line("the normalization mean row")?;
            let mean = parse_csv_row(&mean_line, ln, &p)?;
            let (ln, inv_line) = next_line("the normalization scale row")?;
            let inv_std = parse_csv_row(&inv_line, ln, &p)?;
            if mean.len() != inv_std.len() {
                return Err(Error::invalid(format!(
                    "model file {p} has mismatched normalization rows"
                )));
            }
            Some(SeriesNorm { mean, inv_std })
        } else {
            None
        };
        let (label_ln, label_line) = next_line("the label row")?;
        let labels: Vec<usize> = label_line
            .split(',')
            .map(|t| {
                t.trim().parse().map_err(|_| Error::Parse {
                    path: p.clone(),
                    line: label_ln,
                    message: format!("invalid label index '{t}'"),
                })
            })
            .collect::<Result<_>>()?;

        let refs = match metric {
            Metric::Euclidean => {
                let mut rows = Vec::with_capacity(n_refs);
                for _ in 0..n_refs {
                    let (ln, line) = next_line("a reference row")?;
                    rows.push(parse_csv_row(&line, ln, &p)?);
                }
                RefStore::Vectors(rows)
            }
            Metric::Dtw { .. } => {
                let mut series = Vec::with_capacity(n_refs);
                for _ in 0..n_refs {
                    let (ln, line) = next_line("a series header")?;
                    let mut parts = line.split_whitespace();
                    if parts.next() != Some("series") {
                        return Err(Error::Parse {
                            path: p,
                            line: ln,
                            message: "expected a 'series' header line".into(),
                        });
                    }
                    let mut channels = 0usize;
                    for part in parts {
                        if let Some(v) = part.strip_prefix("channels=") {
                            channels = v.parse().map_err(|_| Error::Parse {
                                path: p.clone(),
                                line: ln,
                                message: format!("invalid channel count '{v}'"),
                            })?;
                        }
                    }
                    let mut s = Vec::with_capacity(channels);
                    for _ in 0..channels {
                        let (ln, line) = next_line("a channel row")?;
                        s.push(parse_csv_row(&line, ln, &p)?);
                    }
                    series.push(s);
                }
                RefStore::Series(series)
            }
        };

        let model = NeighborModel { k, metric, n_classes, labels, refs, norm };
        if model.labels.len() != n_refs || model.n_refs() != n_refs {
            return Err(Error::invalid(format!(
                "model file {p} declares {n_refs} references but stores a different count"
            )));
        }
        check_fit_args(model.n_refs(), &model.labels, model.n_classes, model.k)?;
        Ok(model)
    }
}

enum Query {
    Vector(Vec<f64>),
    Series(Vec<Vec<f64>>),
}

fn parse_csv_row(line: &str, line_no: usize, path: &str) -> Result<Vec<f64>> {
    line.split(',')
        .map(|tok| parse_f64(tok.trim(), path, line_no))
        .collect()
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
