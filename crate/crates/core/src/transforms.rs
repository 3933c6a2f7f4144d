//! Feature-space transforms: quantile mapping, standardization, PCA, LDA,
//! and neighbourhood components analysis (NCA).
//!
//! All transforms follow the fit/apply split: `fit_*` learns parameters from
//! training rows only and returns a serializable map; `apply` projects any
//! row set with the frozen parameters, so held-out data never leaks into the
//! fit. Linear transforms share the [`LinearMap`] container (centering vector
//! plus a diagonal or dense weight matrix); the rank-preserving monotone
//! transform lives in [`QuantileMap`].

use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::features::quantile_sorted;
use crate::io::{fmt_g17, parse_f64};
use crate::{Error, Result};

/// Number of rows per work unit in the parallel NCA accumulation. Partial
/// results are reduced in chunk order so the outcome is bit-identical to the
/// sequential computation regardless of thread count.
const NCA_CHUNK: usize = 64;

// ---------------------------------------------------------------------------
// Row helpers
// ---------------------------------------------------------------------------

/// Validates that `rows` is a non-empty rectangular matrix and returns its width.
fn row_width(rows: &[Vec<f64>]) -> Result<usize> {
    let first = rows
        .first()
        .ok_or_else(|| Error::invalid("transform fit requires at least one row"))?;
    let width = first.len();
    if width == 0 {
        return Err(Error::invalid("transform fit requires at least one feature"));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(Error::invalid(format!(
                "row {i} has {} values, expected {width}",
                row.len()
            )));
        }
    }
    Ok(width)
}

fn column(rows: &[Vec<f64>], j: usize) -> Vec<f64> {
    rows.iter().map(|r| r[j]).collect()
}

// ---------------------------------------------------------------------------
// Quantile map
// ---------------------------------------------------------------------------

/// Monotone per-feature map onto `[0, 1]` fitted from training quantiles.
///
/// For each feature, `landmarks[feature]` holds the training quantiles at the
/// evenly spaced levels `i / (n_quantiles - 1)`. `apply` interpolates linearly
/// between neighbouring landmarks, clips values outside the training range to
/// the interval ends, and maps values inside a run of equal landmarks to the
/// midpoint of that run's level range.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileMap {
    n_quantiles: usize,
    /// `landmarks[feature][level]`, non-decreasing within each feature.
    landmarks: Vec<Vec<f64>>,
}

/// Fits a [`QuantileMap`] on training rows. Requires `n_quantiles >= 2` and at
/// least one row.
pub fn fit_quantile(rows: &[Vec<f64>], n_quantiles: usize) -> Result<QuantileMap> {
    if n_quantiles < 2 {
        return Err(Error::invalid(format!(
            "n_quantiles must be at least 2, got {n_quantiles}"
        )));
    }
    let width = row_width(rows)?;
    let mut landmarks = Vec::with_capacity(width);
    for j in 0..width {
        let mut col = column(rows, j);
        col.sort_by(|a, b| a.partial_cmp(b).expect("finite features"));
        let marks: Vec<f64> = (0..n_quantiles)
            .map(|i| quantile_sorted(&col, i as f64 / (n_quantiles - 1) as f64))
            .collect();
        landmarks.push(marks);
    }
    Ok(QuantileMap { n_quantiles, landmarks })
}

impl QuantileMap {
    pub fn n_quantiles(&self) -> usize {
        self.n_quantiles
    }

    pub fn n_features(&self) -> usize {
        self.landmarks.len()
    }

    /// Landmark values for one feature (levels `i / (n_quantiles - 1)`).
    pub fn landmarks(&self, feature: usize) -> &[f64] {
        &self.landmarks[feature]
    }

    /// Maps a single value of `feature` into `[0, 1]`.
    pub fn apply_value(&self, feature: usize, value: f64) -> f64 {
        let marks = &self.landmarks[feature];
        let last = marks.len() - 1;
        if value <= marks[0] {
            // A run of equal landmarks at the very bottom still maps its exact
            // value to the midpoint of the run's level range.
            if value == marks[0] {
                let hi = marks.partition_point(|&m| m <= value);
                return (self.level(0) + self.level(hi - 1)) / 2.0;
            }
            return 0.0;
        }
        if value >= marks[last] {
            if value == marks[last] {
                let lo = marks.partition_point(|&m| m < value);
                return (self.level(lo) + self.level(last)) / 2.0;
            }
            return 1.0;
        }
        let lo = marks.partition_point(|&m| m < value);
        let hi = marks.partition_point(|&m| m <= value);
        if lo < hi {
            // Exact hit on a (possibly repeated) landmark: midpoint of levels.
            (self.level(lo) + self.level(hi - 1)) / 2.0
        } else {
            // Strictly between two distinct landmarks: linear interpolation.
            let a = marks[lo - 1];
            let b = marks[lo];
            let frac = (value - a) / (b - a);
            self.level(lo - 1) + frac * (self.level(lo) - self.level(lo - 1))
        }
    }

    fn level(&self, i: usize) -> f64 {
        i as f64 / (self.n_quantiles - 1) as f64
    }

    /// Maps every row; rows must match the fitted feature count.
    pub fn apply(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let width = self.n_features();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::invalid(format!(
                    "row {i} has {} values, quantile map expects {width}",
                    row.len()
                )));
            }
        }
        Ok(rows
            .par_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(j, &v)| self.apply_value(j, v))
                    .collect()
            })
            .collect())
    }

    /// Writes the map as text: a header line naming the kind and shape, then
    /// one comma-separated landmark row per feature.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = BufWriter::new(file);
        let mut inner = || -> std::io::Result<()> {
            writeln!(
                w,
                "quantile_map n_quantiles={} features={}",
                self.n_quantiles,
                self.n_features()
            )?;
            for marks in &self.landmarks {
                let line: Vec<String> = marks.iter().map(|&v| fmt_g17(v)).collect();
                writeln!(w, "{}", line.join(","))?;
            }
            w.flush()
        };
        inner().map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let path_str = path.display().to_string();
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::Parse {
            path: path_str.clone(),
            line: 1,
            message: "empty quantile map file".into(),
        })?;
        let fields = parse_header(header, "quantile_map", &path_str)?;
        let n_quantiles = header_usize(&fields, "n_quantiles", &path_str)?;
        let features = header_usize(&fields, "features", &path_str)?;
        let mut landmarks = Vec::with_capacity(features);
        for (idx, line) in lines {
            let row = parse_row(line, idx + 1, &path_str)?;
            if row.len() != n_quantiles {
                return Err(Error::Parse {
                    path: path_str,
                    line: idx + 1,
                    message: format!("expected {n_quantiles} landmarks, found {}", row.len()),
                });
            }
            landmarks.push(row);
        }
        if landmarks.len() != features {
            return Err(Error::invalid(format!(
                "quantile map file {path_str} declares {features} features but has {} rows",
                landmarks.len()
            )));
        }
        if n_quantiles < 2 {
            return Err(Error::invalid(format!(
                "quantile map file {path_str} has n_quantiles={n_quantiles}, need at least 2"
            )));
        }
        Ok(QuantileMap { n_quantiles, landmarks })
    }
}

// ---------------------------------------------------------------------------
// Linear maps
// ---------------------------------------------------------------------------

/// Which fit produced a [`LinearMap`]; recorded in the serialized header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapKind {
    Standardize,
    Pca,
    Lda,
    Nca,
}

impl MapKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MapKind::Standardize => "standardize",
            MapKind::Pca => "pca",
            MapKind::Lda => "lda",
            MapKind::Nca => "nca",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "standardize" => Ok(MapKind::Standardize),
            "pca" => Ok(MapKind::Pca),
            "lda" => Ok(MapKind::Lda),
            "nca" => Ok(MapKind::Nca),
            other => Err(Error::invalid(format!("unknown linear map kind '{other}'"))),
        }
    }
}

/// Weight storage: per-feature scaling or a dense projection matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Weights {
    /// Element-wise scale; output dimension equals input dimension.
    Diagonal(Vec<f64>),
    /// Row-major `n_components x n_features` projection.
    Dense(Vec<Vec<f64>>),
}

/// Affine transform `y = W (x - center)` with diagonal or dense `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    pub kind: MapKind,
    pub center: Vec<f64>,
    pub weights: Weights,
}

impl LinearMap {
    pub fn n_features(&self) -> usize {
        self.center.len()
    }

    pub fn n_components(&self) -> usize {
        match &self.weights {
            Weights::Diagonal(d) => d.len(),
            Weights::Dense(rows) => rows.len(),
        }
    }

    /// Projects one row (length must equal `n_features`).
    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        debug_assert_eq!(row.len(), self.n_features());
        match &self.weights {
            Weights::Diagonal(d) => row
                .iter()
                .zip(&self.center)
                .zip(d)
                .map(|((&x, &c), &w)| (x - c) * w)
                .collect(),
            Weights::Dense(w) => w
                .iter()
                .map(|comp| {
                    comp.iter()
                        .zip(row.iter().zip(&self.center))
                        .map(|(&a, (&x, &c))| a * (x - c))
                        .sum()
                })
                .collect(),
        }
    }

    /// Projects every row; rows must match the fitted feature count.
    pub fn apply(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let width = self.n_features();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::invalid(format!(
                    "row {i} has {} values, linear map expects {width}",
                    row.len()
                )));
            }
        }
        Ok(rows.par_iter().map(|row| self.apply_row(row)).collect())
    }

    /// Writes the map as text: a header line naming kind, storage, and shape,
    /// a centering row, then the weight rows.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = BufWriter::new(file);
        let storage = match &self.weights {
            Weights::Diagonal(_) => "diag",
            Weights::Dense(_) => "dense",
        };
        let mut inner = || -> std::io::Result<()> {
            writeln!(
                w,
                "linear_map kind={} storage={} components={} features={}",
                self.kind.as_str(),
                storage,
                self.n_components(),
                self.n_features()
            )?;
            let center: Vec<String> = self.center.iter().map(|&v| fmt_g17(v)).collect();
            writeln!(w, "{}", center.join(","))?;
            match &self.weights {
                Weights::Diagonal(d) => {
                    let line: Vec<String> = d.iter().map(|&v| fmt_g17(v)).collect();
                    writeln!(w, "{}", line.join(","))?;
                }
                Weights::Dense(rows) => {
                    for row in rows {
                        let line: Vec<String> = row.iter().map(|&v| fmt_g17(v)).collect();
                        writeln!(w, "{}", line.join(","))?;
                    }
                }
            }
            w.flush()
        };
        inner().map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let path_str = path.display().to_string();
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::Parse {
            path: path_str.clone(),
            line: 1,
            message: "empty linear map file".into(),
        })?;
        let fields = parse_header(header, "linear_map", &path_str)?;
        let kind = MapKind::parse(header_field(&fields, "kind", &path_str)?)?;
        let storage = header_field(&fields, "storage", &path_str)?;
        let components = header_usize(&fields, "components", &path_str)?;
        let features = header_usize(&fields, "features", &path_str)?;

        let (_, center_line) = lines.next().ok_or_else(|| Error::Parse {
            path: path_str.clone(),
            line: 2,
            message: "missing centering row".into(),
        })?;
        let center = parse_row(center_line, 2, &path_str)?;
        if center.len() != features {
            return Err(Error::Parse {
                path: path_str,
                line: 2,
                message: format!("centering row has {} values, expected {features}", center.len()),
            });
        }

        let mut rows = Vec::new();
        for (idx, line) in lines {
            rows.push((idx + 1, parse_row(line, idx + 1, &path_str)?));
        }
        let weights = match storage {
            "diag" => {
                if rows.len() != 1 {
                    return Err(Error::invalid(format!(
                        "diagonal linear map file {path_str} must have exactly one weight row, found {}",
                        rows.len()
                    )));
                }
                let (line_no, diag) = rows.pop().expect("checked length");
                if diag.len() != features || components != features {
                    return Err(Error::Parse {
                        path: path_str,
                        line: line_no,
                        message: format!(
                            "diagonal weights need components == features == row length, got components={components} features={features} length={}",
                            diag.len()
                        ),
                    });
                }
                Weights::Diagonal(diag)
            }
            "dense" => {
                if rows.len() != components {
                    return Err(Error::invalid(format!(
                        "linear map file {path_str} declares {components} components but has {} weight rows",
                        rows.len()
                    )));
                }
                let mut dense = Vec::with_capacity(components);
                for (line_no, row) in rows {
                    if row.len() != features {
                        return Err(Error::Parse {
                            path: path_str,
                            line: line_no,
                            message: format!(
                                "weight row has {} values, expected {features}",
                                row.len()
                            ),
                        });
                    }
                    dense.push(row);
                }
                Weights::Dense(dense)
            }
            other => {
                return Err(Error::invalid(format!(
                    "unknown linear map storage '{other}' in {path_str}"
                )))
            }
        };
        Ok(LinearMap { kind, center, weights })
    }
}

fn parse_header<'a>(
    header: &'a str,
    expected_tag: &str,
    path: &str,
) -> Result<Vec<(&'a str, &'a str)>> {
    let mut tokens = header.split_whitespace();
    let tag = tokens.next().unwrap_or("");
    if tag != expected_tag {
        return Err(Error::Parse {
            path: path.to_string(),
            line: 1,
            message: format!("expected header tag '{expected_tag}', found '{tag}'"),
        });
    }
    let mut fields = Vec::new();
    for token in tokens {
        let (k, v) = token.split_once('=').ok_or_else(|| Error::Parse {
            path: path.to_string(),
            line: 1,
            message: format!("malformed header field '{token}'"),
        })?;
        fields.push((k, v));
    }
    Ok(fields)
}

fn header_field<'a>(fields: &[(&'a str, &'a str)], key: &str, path: &str) -> Result<&'a str> {
    fields
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| Error::Parse {
            path: path.to_string(),
            line: 1,
            message: format!("header is missing field '{key}'"),
        })
}

fn header_usize(fields: &[(&str, &str)], key: &str, path: &str) -> Result<usize> {
    let raw = header_field(fields, key, path)?;
    raw.parse().map_err(|_| Error::Parse {
        path: path.to_string(),
        line: 1,
        message: format!("header field '{key}' is not a count: '{raw}'"),
    })
}

fn parse_row(line: &str, line_no: usize, path: &str) -> Result<Vec<f64>> {
    line.split(',')
        .map(|tok| parse_f64(tok.trim(), path, line_no))
        .collect()
}

// ---------------------------------------------------------------------------
// Standardize
// ---------------------------------------------------------------------------

/// Fits a z-score map: subtract the training mean, divide by the training
/// standard deviation (population). Zero-variance features map to constant 0.
pub fn fit_standardize(rows: &[Vec<f64>]) -> Result<LinearMap> {
    let width = row_width(rows)?;
    let n = rows.len() as f64;
    let mut center = vec![0.0; width];
    for row in rows {
        for (c, &v) in center.iter_mut().zip(row) {
            *c += v;
        }
    }
    for c in &mut center {
        *c /= n;
    }
    let mut scale = vec![0.0; width];
    for row in rows {
        for ((s, &v), &c) in scale.iter_mut().zip(row).zip(&center) {
            let d = v - c;
            *s += d * d;
        }
    }
    for s in &mut scale {
        let std = (*s / n).sqrt();
        *s = if std > 0.0 { 1.0 / std } else { 0.0 };
    }
    Ok(LinearMap {
        kind: MapKind::Standardize,
        center,
        weights: Weights::Diagonal(scale),
    })
}

// ---------------------------------------------------------------------------
// PCA
// ---------------------------------------------------------------------------

/// Eigenvalues of the training covariance for the retained components,
/// descending, plus the total variance for explained-variance ratios.
#[derive(Debug, Clone)]
pub struct PcaInfo {
    pub eigenvalues: Vec<f64>,
    pub total_variance: f64,
}

impl PcaInfo {
    /// Fraction of total variance captured by the retained components.
    pub fn explained_ratio(&self) -> f64 {
        if self.total_variance > 0.0 {
            self.eigenvalues.iter().sum::<f64>() / self.total_variance
        } else {
            0.0
        }
    }
}

/// Fits PCA by eigendecomposition of the sample covariance (denominator
/// `n - 1`). Components are ordered by descending eigenvalue; each component's
/// largest-magnitude coordinate is made positive so the fit is deterministic.
pub fn fit_pca(rows: &[Vec<f64>], n_components: usize) -> Result<(LinearMap, PcaInfo)> {
    let width = row_width(rows)?;
    if rows.len() < 2 {
        return Err(Error::invalid("PCA requires at least two rows"));
    }
    if n_components == 0 || n_components > width {
        return Err(Error::invalid(format!(
            "n_components must be in 1..={width}, got {n_components}"
        )));
    }
    let n = rows.len() as f64;
    let mut center = vec![0.0; width];
    for row in rows {
        for (c, &v) in center.iter_mut().zip(row) {
            *c += v;
        }
    }
    for c in &mut center {
        *c /= n;
    }
    let mut cov = DMatrix::<f64>::zeros(width, width);
    for row in rows {
        let d: Vec<f64> = row.iter().zip(&center).map(|(&v, &c)| v - c).collect();
        for i in 0..width {
            for j in i..width {
                cov[(i, j)] += d[i] * d[j];
            }
        }
    }
    let denom = n - 1.0;
    for i in 0..width {
        for j in i..width {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let total_variance = cov.trace();
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..width).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
    });
    let mut components = Vec::with_capacity(n_components);
    let mut eigenvalues = Vec::with_capacity(n_components);
    for &idx in order.iter().take(n_components) {
        let mut comp: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        orient_row(&mut comp);
        components.push(comp);
        eigenvalues.push(eig.eigenvalues[idx]);
    }
    Ok((
        LinearMap {
            kind: MapKind::Pca,
            center,
            weights: Weights::Dense(components),
        },
        PcaInfo { eigenvalues, total_variance },
    ))
}

/// Flips a component so its largest-magnitude coordinate is positive.
fn orient_row(row: &mut [f64]) {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate() {
        if v.abs() > row[best].abs() {
            best = i;
        }
    }
    if row[best] < 0.0 {
        for v in row.iter_mut() {
            *v = -*v;
        }
    }
}

// ---------------------------------------------------------------------------
// LDA
// ---------------------------------------------------------------------------

/// Diagnostics from the LDA fit.
#[derive(Debug, Clone)]
pub struct LdaInfo {
    /// Generalized eigenvalues (between-class over within-class scatter) for
    /// the retained components, descending.
    pub eigenvalues: Vec<f64>,
    /// True when the class means coincide, i.e. the between-class scatter is
    /// (numerically) zero and the directions carry no class signal.
    pub zero_between_scatter: bool,
}

/// Fits Fisher LDA directions by solving the generalized eigenproblem
/// `Sb v = lambda Sw v`. The within-class scatter is ridge-regularized with
/// `epsilon = 1e-6 * trace(Sw) / n_features` before the Cholesky factorization
/// so near-singular scatter stays solvable. Components are unit-norm rows with
/// the PCA sign convention; `classes[i]` is the class index of `rows[i]`.
pub fn fit_lda(
    rows: &[Vec<f64>],
    classes: &[usize],
    n_components: usize,
) -> Result<(LinearMap, LdaInfo)> {
    let width = row_width(rows)?;
    if classes.len() != rows.len() {
        return Err(Error::invalid(format!(
            "got {} class labels for {} rows",
            classes.len(),
            rows.len()
        )));
    }
    let n_classes = classes.iter().map(|&c| c + 1).max().unwrap_or(0);
    let mut counts = vec![0usize; n_classes];
    for &c in classes {
        counts[c] += 1;
    }
    let present: Vec<usize> = (0..n_classes).filter(|&c| counts[c] > 0).collect();
    if present.len() < 2 {
        return Err(Error::invalid("LDA requires at least two classes with samples"));
    }
    for &c in &present {
        if counts[c] < 2 {
            return Err(Error::invalid(format!(
                "LDA requires at least 2 samples per class; class {c} has {}",
                counts[c]
            )));
        }
    }
    let max_components = (present.len() - 1).min(width);
    if n_components == 0 || n_components > max_components {
        return Err(Error::invalid(format!(
            "n_components must be in 1..={max_components} for {} classes and {width} features, got {n_components}",
            present.len()
        )));
    }

    // Global and per-class means.
    let n = rows.len() as f64;
    let mut grand = vec![0.0; width];
    let mut means = vec![vec![0.0; width]; n_classes];
    for (row, &c) in rows.iter().zip(classes) {
        for (j, &v) in row.iter().enumerate() {
            grand[j] += v;
            means[c][j] += v;
        }
    }
    for g in &mut grand {
        *g /= n;
    }
    for &c in &present {
        for v in &mut means[c] {
            *v /= counts[c] as f64;
        }
    }

    // Within- and between-class scatter.
    let mut sw = DMatrix::<f64>::zeros(width, width);
    for (row, &c) in rows.iter().zip(classes) {
        let d: Vec<f64> = row.iter().zip(&means[c]).map(|(&v, &m)| v - m).collect();
        for i in 0..width {
            for j in i..width {
                sw[(i, j)] += d[i] * d[j];
            }
        }
    }
    let mut sb = DMatrix::<f64>::zeros(width, width);
    for &c in &present {
        let d: Vec<f64> = means[c].iter().zip(&grand).map(|(&m, &g)| m - g).collect();
        let w = counts[c] as f64;
        for i in 0..width {
            for j in i..width {
                sb[(i, j)] += w * d[i] * d[j];
            }
        }
    }
    for i in 0..width {
        for j in (i + 1)..width {
            sw[(j, i)] = sw[(i, j)];
            sb[(j, i)] = sb[(i, j)];
        }
    }

    let zero_between_scatter = sb.trace() <= 1e-12 * (1.0 + sw.trace());

    // Ridge keeps the Cholesky factorization well-posed; the floor covers the
    // all-constant corner where trace(Sw) itself is zero.
    let eps = 1e-6 * (sw.trace() / width as f64).max(1e-12);
    for i in 0..width {
        sw[(i, i)] += eps;
    }

    let chol = Cholesky::new(sw)
        .ok_or_else(|| Error::invalid("within-class scatter is not positive definite"))?;
    let l = chol.l();
    // M = L^-1 Sb L^-T, symmetric; its eigenpairs give the generalized ones.
    let m1 = l
        .solve_lower_triangular(&sb)
        .ok_or_else(|| Error::invalid("within-class scatter factor is singular"))?;
    let m = l
        .solve_lower_triangular(&m1.transpose())
        .ok_or_else(|| Error::invalid("within-class scatter factor is singular"))?;
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..width).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
    });

    let lt = l.transpose();
    let mut components = Vec::with_capacity(n_components);
    let mut eigenvalues = Vec::with_capacity(n_components);
    for &idx in order.iter().take(n_components) {
        let u = eig.eigenvectors.column(idx).into_owned();
        // Back-transform v = L^-T u, then normalize for a deterministic scale.
        let v = lt
            .solve_upper_triangular(&u)
            .ok_or_else(|| Error::invalid("within-class scatter factor is singular"))?;
        let norm = v.norm();
        let mut comp: Vec<f64> = if norm > 0.0 {
            v.iter().map(|&x| x / norm).collect()
        } else {
            v.iter().copied().collect()
        };
        orient_row(&mut comp);
        components.push(comp);
        eigenvalues.push(eig.eigenvalues[idx]);
    }
    Ok((
        LinearMap {
            kind: MapKind::Lda,
            center: grand,
            weights: Weights::Dense(components),
        },
        LdaInfo { eigenvalues, zero_between_scatter },
    ))
}

// ---------------------------------------------------------------------------
// NCA
// ---------------------------------------------------------------------------

/// Options for the NCA gradient ascent.
#[derive(Debug, Clone, PartialEq)]
pub struct NcaOptions {
    /// Maximum accepted ascent steps.
    pub max_iter: usize,
    /// Stop when the relative objective improvement falls below this.
    pub tol: f64,
    /// Step size tried first each iteration before backtracking halving.
    pub base_step: f64,
}

impl Default for NcaOptions {
    fn default() -> Self {
        NcaOptions { max_iter: 200, tol: 1e-6, base_step: 1.0 }
    }
}

/// Fit diagnostics: accepted objective values (starting with the initial one)
/// and whether the tolerance was reached before `max_iter`.
#[derive(Debug, Clone)]
pub struct NcaReport {
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

impl NcaReport {
    pub fn iterations(&self) -> usize {
        self.objective_trace.len().saturating_sub(1)
    }
}

/// Expected number of correctly classified samples under the stochastic
/// soft-neighbour rule: `sum_i sum_{j in class(i), j != i} p_ij` with
/// `p_ij = softmax_j(-||A x_i - A x_j||^2)` and `p_ii = 0`.
pub fn nca_objective(a: &[Vec<f64>], rows: &[Vec<f64>], classes: &[usize]) -> f64 {
    let embedded = embed(a, rows);
    accumulate(&embedded, rows, classes, None).0
}

/// Gradient of [`nca_objective`] with respect to `A` (same shape as `a`).
pub fn nca_gradient(a: &[Vec<f64>], rows: &[Vec<f64>], classes: &[usize]) -> Vec<Vec<f64>> {
    let embedded = embed(a, rows);
    let d = rows[0].len();
    let k = a.len();
    let (_, grad) = accumulate(&embedded, rows, classes, Some((k, d)));
    grad.expect("gradient requested")
}

fn embed(a: &[Vec<f64>], rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|row| {
            a.iter()
                .map(|comp| comp.iter().zip(row).map(|(&w, &x)| w * x).sum())
                .collect()
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// One pass over all pairs computing the objective and, when `grad_shape` is
/// given, the gradient. Work is chunked over anchor rows and reduced in chunk
/// order so results are bit-identical across thread counts.
fn accumulate(
    embedded: &[Vec<f64>],
    rows: &[Vec<f64>],
    classes: &[usize],
    grad_shape: Option<(usize, usize)>,
) -> (f64, Option<Vec<Vec<f64>>>) {
    let n = rows.len();
    struct Partial {
        objective: f64,
        /// Gradient contribution of the anchor-side terms, flattened k*d.
        grad: Vec<f64>,
        /// Per-neighbour coefficient column sums, length n.
        col: Vec<f64>,
    }
    let want_grad = grad_shape.is_some();
    let (k, d) = grad_shape.unwrap_or((0, 0));

    let indices: Vec<usize> = (0..n).collect();
    let partials: Vec<Partial> = indices
        .par_chunks(NCA_CHUNK)
        .map(|chunk| {
            let mut objective = 0.0;
            let mut grad = vec![0.0; if want_grad { k * d } else { 0 }];
            let mut col = vec![0.0; if want_grad { n } else { 0 }];
            let mut dist = vec![0.0; n];
            let mut p = vec![0.0; n];
            for &i in chunk {
                // Softmax over -squared distances, stabilized by the minimum
                // distance so the largest exponent is exactly 0.
                let mut min_d = f64::INFINITY;
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let dij = sq_dist(&embedded[i], &embedded[j]);
                    dist[j] = dij;
                    if dij < min_d {
                        min_d = dij;
                    }
                }
                if !min_d.is_finite() {
                    // Single-row corner: no neighbours at all.
                    continue;
                }
                let mut z = 0.0;
                for j in 0..n {
                    if j == i {
                        p[j] = 0.0;
                        continue;
                    }
                    let w = (-(dist[j] - min_d)).exp();
                    p[j] = w;
                    z += w;
                }
                let mut p_i = 0.0;
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    p[j] /= z;
                    if classes[j] == classes[i] {
                        p_i += p[j];
                    }
                }
                objective += p_i;
                if !want_grad {
                    continue;
                }
                // c_ij = p_i * p_ij - [same class] * p_ij; the full gradient is
                // 2 * sum_ij c_ij (z_i - z_j)(x_i - x_j)^T, expanded into
                // anchor-side terms plus a neighbour-side column-sum term.
                let mut s_i = 0.0;
                let mut u_i = vec![0.0; d];
                let mut v_i = vec![0.0; k];
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let same = classes[j] == classes[i];
                    let c = p[j] * (p_i - if same { 1.0 } else { 0.0 });
                    if c == 0.0 {
                        continue;
                    }
                    s_i += c;
                    for (u, &x) in u_i.iter_mut().zip(&rows[j]) {
                        *u += c * x;
                    }
                    for (v, &zj) in v_i.iter_mut().zip(&embedded[j]) {
                        *v += c * zj;
                    }
                    col[j] += c;
                }
                for r in 0..k {
                    let zi = embedded[i][r];
                    let base = r * d;
                    for cidx in 0..d {
                        grad[base + cidx] +=
                            zi * (s_i * rows[i][cidx] - u_i[cidx]) - v_i[r] * rows[i][cidx];
                    }
                }
            }
            Partial { objective, grad, col }
        })
        .collect();

    let mut objective = 0.0;
    let mut grad_flat = vec![0.0; if want_grad { k * d } else { 0 }];
    let mut col = vec![0.0; if want_grad { n } else { 0 }];
    for part in partials {
        objective += part.objective;
        for (g, &pg) in grad_flat.iter_mut().zip(&part.grad) {
            *g += pg;
        }
        for (c, &pc) in col.iter_mut().zip(&part.col) {
            *c += pc;
        }
    }
    if !want_grad {
        return (objective, None);
    }
    // Neighbour-side term: sum_j (sum_i c_ij) z_j x_j^T.
    for (j, &t) in col.iter().enumerate() {
        if t == 0.0 {
            continue;
        }
        for r in 0..k {
            let base = r * d;
            let tz = t * embedded[j][r];
            for cidx in 0..d {
                grad_flat[base + cidx] += tz * rows[j][cidx];
            }
        }
    }
    let grad: Vec<Vec<f64>> = (0..k)
        .map(|r| grad_flat[r * d..(r + 1) * d].iter().map(|&g| 2.0 * g).collect())
        .collect();
    (objective, Some(grad))
}

/// Maximizes the NCA objective by gradient ascent from `init`, trying the
/// fixed base step each iteration and halving on failure to improve. Returns
/// the best projection seen. The centering vector is carried over from `init`
/// unchanged (the objective only sees pairwise differences, so centering
/// cannot affect it).
pub fn fit_nca(
    rows: &[Vec<f64>],
    classes: &[usize],
    init: &LinearMap,
    opts: &NcaOptions,
) -> Result<(LinearMap, NcaReport)> {
    let width = row_width(rows)?;
    if classes.len() != rows.len() {
        return Err(Error::invalid(format!(
            "got {} class labels for {} rows",
            classes.len(),
            rows.len()
        )));
    }
    if init.n_features() != width {
        return Err(Error::invalid(format!(
            "initial projection expects {} features, rows have {width}",
            init.n_features()
        )));
    }
    if opts.max_iter == 0 || !(opts.tol > 0.0) || !(opts.base_step > 0.0) {
        return Err(Error::invalid(
            "NCA options require max_iter >= 1, tol > 0, and base_step > 0",
        ));
    }
    let mut a: Vec<Vec<f64>> = match &init.weights {
        Weights::Dense(rows) => rows.clone(),
        Weights::Diagonal(diag) => {
            // Expand a diagonal start into an explicit dense square matrix.
            let mut dense = vec![vec![0.0; width]; width];
            for (i, &v) in diag.iter().enumerate() {
                dense[i][i] = v;
            }
            dense
        }
    };

    let mut objective = nca_objective(&a, rows, classes);
    if !objective.is_finite() {
        return Err(Error::invalid(
            "NCA objective is non-finite at the initial projection",
        ));
    }
    let mut trace = vec![objective];
    let mut best_a = a.clone();
    let mut best_objective = objective;
    let mut converged = false;

    'outer: for iter in 0..opts.max_iter {
        let grad = nca_gradient(&a, rows, classes);
        let grad_norm: f64 = grad
            .iter()
            .flat_map(|r| r.iter())
            .map(|&g| g * g)
            .sum::<f64>()
            .sqrt();
        if grad_norm == 0.0 {
            converged = true;
            break;
        }
        let mut step = opts.base_step;
        let mut accepted = false;
        for _ in 0..40 {
            let candidate: Vec<Vec<f64>> = a
                .iter()
                .zip(&grad)
                .map(|(row, g)| row.iter().zip(g).map(|(&w, &gv)| w + step * gv).collect())
                .collect();
            let cand_obj = nca_objective(&candidate, rows, classes);
            if !cand_obj.is_finite() {
                return Err(Error::invalid(format!(
                    "NCA objective became non-finite at iteration {}",
                    iter + 1
                )));
            }
            if cand_obj > objective {
                let rel = (cand_obj - objective) / objective.abs().max(1.0);
                a = candidate;
                objective = cand_obj;
                trace.push(objective);
                if objective > best_objective {
                    best_objective = objective;
                    best_a = a.clone();
                }
                accepted = true;
                if rel < opts.tol {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // No step length improves the objective: treat as converged.
            converged = true;
            break;
        }
    }

    Ok((
        LinearMap {
            kind: MapKind::Nca,
            center: init.center.clone(),
            weights: Weights::Dense(best_a),
        },
        NcaReport { objective_trace: trace, converged },
    ))
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
