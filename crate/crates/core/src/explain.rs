//! Perturbation-based local explanations for series classifiers: each channel
//! is cut into contiguous time slices, random subsets of (channel, slice)
//! segments are replaced by the training mean of their channel, the black-box
//! model is queried on every perturbed sample, and a kernel-weighted ridge
//! surrogate maps segment presence to the predicted-class probability. The
//! surrogate's signed coefficients are the reported importances.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::classifiers::ClassProbabilities;
use crate::data::{Sample, CHANNEL_COUNT};
use crate::{Error, Result};

/// Ridge penalty of the surrogate fit (the intercept is not penalized).
pub const RIDGE_LAMBDA: f64 = 1e-3;
/// Proximity kernel width: weight = exp(-d^2 / KERNEL_WIDTH^2) where d is the
/// fraction of segments masked out.
pub const KERNEL_WIDTH: f64 = 0.25;

/// Contiguous partition of `[0, length)` into `n_slices` pieces whose sizes
/// differ by at most one; the first `length % n_slices` slices are longer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceGrid {
    length: usize,
    /// Half-open `(start, end)` ranges, in order.
    bounds: Vec<(usize, usize)>,
}

/// Builds the slice grid; requires `1 <= n_slices <= length`.
pub fn make_slice_grid(length: usize, n_slices: usize) -> Result<SliceGrid> {
    if n_slices == 0 {
        return Err(Error::invalid("a slice grid needs at least one slice"));
    }
    if length < n_slices {
        return Err(Error::invalid(format!(
            "cannot cut a series of length {length} into {n_slices} slices"
        )));
    }
    let base = length / n_slices;
    let extra = length % n_slices;
    let mut bounds = Vec::with_capacity(n_slices);
    let mut start = 0usize;
    for i in 0..n_slices {
        let len = if i < extra { base + 1 } else { base };
        bounds.push((start, start + len));
        start += len;
    }
    debug_assert_eq!(start, length);
    Ok(SliceGrid { length, bounds })
}

impl SliceGrid {
    pub fn length(&self) -> usize {
        self.length
    }

    pub fn n_slices(&self) -> usize {
        self.bounds.len()
    }

    /// Half-open `(start, end)` of one slice.
    pub fn slice(&self, index: usize) -> (usize, usize) {
        self.bounds[index]
    }

    pub fn slices(&self) -> &[(usize, usize)] {
        &self.bounds
    }
}

/// One attributed segment: a channel, a slice on the grid, and the signed
/// surrogate coefficient (positive = evidence for the predicted class).
#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationEntry {
    pub channel: usize,
    pub slice: usize,
    pub weight: f64,
}

/// Explanation for one sample: the strongest segments, sorted by |weight|.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationReport {
    pub model_id: String,
    pub sample_id: String,
    pub predicted_class: usize,
    pub n_slices: usize,
    pub n_perturbations: usize,
    pub seed: u64,
    /// Surrogate hyper-parameters, recorded for reproducibility.
    pub kernel_width: f64,
    pub ridge_lambda: f64,
    /// Sorted by descending |weight|, truncated to the requested top_k.
    pub entries: Vec<ExplanationEntry>,
}

/// Tuning knobs for [`explain`].
#[derive(Debug, Clone)]
pub struct ExplainOptions {
    pub n_slices: usize,
    pub n_perturbations: usize,
    pub top_k: usize,
    pub seed: u64,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        ExplainOptions { n_slices: 20, n_perturbations: 1000, top_k: 30, seed: 0 }
    }
}

/// Per-channel mean over every frame of every sample; the replacement value
/// for masked-out segments. Computed on training data only.
pub fn training_channel_means(samples: &[Sample]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::invalid("channel means need at least one sample"));
    }
    let mut sums = vec![0.0; CHANNEL_COUNT];
    let mut count = 0usize;
    for s in samples {
        for (c, sum) in sums.iter_mut().enumerate() {
            *sum += s.channel(c).iter().sum::<f64>();
        }
        count += s.len();
    }
    Ok(sums.into_iter().map(|v| v / count as f64).collect())
}

/// Explains one prediction of a black-box probability model.
///
/// `model` must return a probability vector of a fixed class count for any
/// perturbed variant of `sample`; `replacement_means` are the per-channel
/// training means substituted into masked-out segments. `model_id` only
/// labels the report.
pub fn explain<F>(
    sample: &Sample,
    model_id: &str,
    model: F,
    replacement_means: &[f64],
    opts: &ExplainOptions,
) -> Result<ExplanationReport>
where
    F: Fn(&Sample) -> Result<ClassProbabilities> + Sync,
{
    if replacement_means.len() != CHANNEL_COUNT {
        return Err(Error::invalid(format!(
            "expected {CHANNEL_COUNT} replacement means, got {}",
            replacement_means.len()
        )));
    }
    if opts.n_perturbations < 2 {
        return Err(Error::invalid("need at least two perturbations to fit a surrogate"));
    }
    if opts.top_k == 0 {
        return Err(Error::invalid("top_k must be at least 1"));
    }
    let grid = make_slice_grid(sample.len(), opts.n_slices)?;
    let p = CHANNEL_COUNT * grid.n_slices();

    // Masks over segments; segment s = channel * n_slices + slice. The first
    // mask keeps everything, so the base prediction is part of the fit.
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut masks: Vec<Vec<bool>> = Vec::with_capacity(opts.n_perturbations);
    masks.push(vec![true; p]);
    for _ in 1..opts.n_perturbations {
        masks.push((0..p).map(|_| rng.random::<bool>()).collect());
    }

    // The model's prediction on the intact sample fixes the target class.
    let base = model(sample)?;
    let n_classes = base.len();
    let predicted_class = base.argmax();

    // Query the model on every perturbed sample (embarrassingly parallel).
    let targets: Vec<f64> = masks
        .par_iter()
        .map(|mask| -> Result<f64> {
            let perturbed = apply_mask(sample, &grid, mask, replacement_means)?;
            let probs = model(&perturbed)?;
            if probs.len() != n_classes {
                return Err(Error::invalid(format!(
                    "model returned {} class probabilities, expected {n_classes}",
                    probs.len()
                )));
            }
            Ok(probs.probs()[predicted_class])
        })
        .collect::<Result<_>>()?;

    // Proximity weights: masks close to the intact sample count more.
    let weights: Vec<f64> = masks
        .iter()
        .map(|mask| {
            let off = mask.iter().filter(|&&keep| !keep).count();
            let d = off as f64 / p as f64;
            (-(d * d) / (KERNEL_WIDTH * KERNEL_WIDTH)).exp()
        })
        .collect();

    let coefficients = weighted_ridge(&masks, &targets, &weights, p);

    let mut entries: Vec<ExplanationEntry> = coefficients
        .iter()
        .enumerate()
        .map(|(s, &weight)| ExplanationEntry {
            channel: s / grid.n_slices(),
            slice: s % grid.n_slices(),
            weight,
        })
        .collect();
    entries.sort_by(|a, b| {
        b.weight
            .abs()
            .partial_cmp(&a.weight.abs())
            .expect("finite coefficients")
            .then(a.channel.cmp(&b.channel))
            .then(a.slice.cmp(&b.slice))
    });
    entries.truncate(opts.top_k.min(p));

    Ok(ExplanationReport {
        model_id: model_id.to_string(),
        sample_id: sample.id.clone(),
        predicted_class,
        n_slices: grid.n_slices(),
        n_perturbations: opts.n_perturbations,
        seed: opts.seed,
        kernel_width: KERNEL_WIDTH,
        ridge_lambda: RIDGE_LAMBDA,
        entries,
    })
}

/// Replaces the masked-out segments of each channel by that channel's mean.
fn apply_mask(
    sample: &Sample,
    grid: &SliceGrid,
    mask: &[bool],
    replacement_means: &[f64],
) -> Result<Sample> {
    let mut values: Vec<Vec<f64>> = (0..CHANNEL_COUNT)
        .map(|c| sample.channel(c).to_vec())
        .collect();
    for (s, &keep) in mask.iter().enumerate() {
        if keep {
            continue;
        }
        let channel = s / grid.n_slices();
        let (start, end) = grid.slice(s % grid.n_slices());
        for v in &mut values[channel][start..end] {
            *v = replacement_means[channel];
        }
    }
    sample.with_values(values)
}

/// Kernel-weighted ridge regression of `targets` on 0/1 mask columns with an
/// unpenalized intercept, solved via weighted centering: center the design
/// and targets by their weighted means, then solve
/// `(X^T W X + lambda I) beta = X^T W y` on the centered data.
fn weighted_ridge(masks: &[Vec<bool>], targets: &[f64], weights: &[f64], p: usize) -> Vec<f64> {
    let total_weight: f64 = weights.iter().sum();
    let mut x_mean = vec![0.0; p];
    for (mask, &w) in masks.iter().zip(weights) {
        for (m, &keep) in x_mean.iter_mut().zip(mask) {
            if keep {
                *m += w;
            }
        }
    }
    for m in &mut x_mean {
        *m /= total_weight;
    }
    let y_mean: f64 =
        targets.iter().zip(weights).map(|(&y, &w)| w * y).sum::<f64>() / total_weight;

    let mut xtwx = DMatrix::<f64>::zeros(p, p);
    let mut xtwy = DVector::<f64>::zeros(p);
    let mut xc = vec![0.0; p];
    for ((mask, &y), &w) in masks.iter().zip(targets).zip(weights) {
        for (c, (&keep, &m)) in mask.iter().zip(&x_mean).enumerate() {
            xc[c] = if keep { 1.0 } else { 0.0 } - m;
        }
        let yc = y - y_mean;
        for i in 0..p {
            let wxi = w * xc[i];
            xtwy[i] += wxi * yc;
            for j in i..p {
                xtwx[(i, j)] += wxi * xc[j];
            }
        }
    }
    for i in 0..p {
        for j in (i + 1)..p {
            xtwx[(j, i)] = xtwx[(i, j)];
        }
        xtwx[(i, i)] += RIDGE_LAMBDA;
    }
    let chol = Cholesky::new(xtwx).expect("ridge-regularized normal matrix is positive definite");
    let beta = chol.solve(&xtwy);
    beta.iter().copied().collect()
}

// ---------------------------------------------------------------------------
// Overlay rendering
// ---------------------------------------------------------------------------

/// Signed weights split into positive and negative magnitude maps
/// (channels x slices), zero where the report has no entry. Two maps so the
/// downstream rendering can color supporting and opposing evidence apart.
#[derive(Debug, Clone, PartialEq)]
pub struct Overlay {
    pub n_slices: usize,
    /// `positive[channel][slice]`, magnitudes of entries with weight > 0.
    pub positive: Vec<Vec<f64>>,
    /// `negative[channel][slice]`, magnitudes of entries with weight < 0.
    pub negative: Vec<Vec<f64>>,
}

/// Expands a report into dense channel-by-slice weight maps.
pub fn render_overlay(report: &ExplanationReport) -> Result<Overlay> {
    let n = report.n_slices;
    let mut positive = vec![vec![0.0; n]; CHANNEL_COUNT];
    let mut negative = vec![vec![0.0; n]; CHANNEL_COUNT];
    for entry in &report.entries {
        if entry.channel >= CHANNEL_COUNT || entry.slice >= n {
            return Err(Error::invalid(format!(
                "entry (channel {}, slice {}) does not fit a {CHANNEL_COUNT} x {n} grid",
                entry.channel, entry.slice
            )));
        }
        if entry.weight >= 0.0 {
            positive[entry.channel][entry.slice] = entry.weight;
        } else {
            negative[entry.channel][entry.slice] = -entry.weight;
        }
    }
    Ok(Overlay { n_slices: n, positive, negative })
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
