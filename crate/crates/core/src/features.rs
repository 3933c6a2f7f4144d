//! Per-channel statistical feature extraction.
//!
//! A fixed catalog of extractors turns each variable-length recording into
//! a fixed-length vector: simple moments, rank statistics, autocorrelation,
//! change-quantile aggregates, Fourier coefficients, chunked linear trends,
//! Ricker-wavelet responses, sample entropy, peak counts and mass
//! quantiles. Extractors that are mathematically undefined on an input
//! (too short, zero variance) return 0 so the produced matrix is total.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;

use crate::data::{Dataset, Sample, CHANNEL_COUNT};
use crate::io::{fmt_g17, parse_f64};
use crate::{Error, Result};

// ------------------------------------------------------------ descriptors

/// Aggregation used inside parameterised extractors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Agg {
    Mean,
    Var,
}

impl Agg {
    fn as_str(self) -> &'static str {
        match self {
            Agg::Mean => "mean",
            Agg::Var => "var",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "mean" => Some(Agg::Mean),
            "var" => Some(Agg::Var),
            _ => None,
        }
    }
}

/// Which part of a complex Fourier coefficient to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FftPart {
    /// Magnitude.
    Abs,
    /// Phase in radians.
    Angle,
}

impl FftPart {
    fn as_str(self) -> &'static str {
        match self {
            FftPart::Abs => "abs",
            FftPart::Angle => "angle",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "abs" => Some(FftPart::Abs),
            "angle" => Some(FftPart::Angle),
            _ => None,
        }
    }
}

/// Which regression attribute an aggregated linear trend reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrendAttr {
    Slope,
    Intercept,
    Stderr,
}

impl TrendAttr {
    fn as_str(self) -> &'static str {
        match self {
            TrendAttr::Slope => "slope",
            TrendAttr::Intercept => "intercept",
            TrendAttr::Stderr => "stderr",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "slope" => Some(TrendAttr::Slope),
            "intercept" => Some(TrendAttr::Intercept),
            "stderr" => Some(TrendAttr::Stderr),
            _ => None,
        }
    }
}

/// One feature computed from a single channel.
#[derive(Debug, Clone, PartialEq)]
pub enum Extractor {
    Mean,
    Variance,
    StdDev,
    Median,
    Min,
    Max,
    AbsEnergy,
    MeanAbsChange,
    MeanChange,
    CountAboveMean,
    CountBelowMean,
    Skewness,
    Kurtosis,
    LongestStrikeAboveMean,
    LongestStrikeBelowMean,
    Autocorrelation { lag: usize },
    Quantile { q: f64 },
    ChangeQuantiles { ql: f64, qh: f64, abs: bool, agg: Agg },
    FftCoefficient { bin: usize, part: FftPart },
    AggLinearTrend { chunk: usize, agg: Agg, attr: TrendAttr },
    CwtCoefficient { width: usize, index: usize },
    SampleEntropy,
    NumberPeaks { support: usize },
    IndexMassQuantile { q: f64 },
}

impl Extractor {
    /// Canonical rendering: extractor name plus `key=value` parameters,
    /// joined by double underscores. Stable across runs; [`Extractor::parse`]
    /// inverts it exactly.
    pub fn render(&self) -> String {
        match self {
            Extractor::Mean => "mean".into(),
            Extractor::Variance => "variance".into(),
            Extractor::StdDev => "std_dev".into(),
            Extractor::Median => "median".into(),
            Extractor::Min => "min".into(),
            Extractor::Max => "max".into(),
            Extractor::AbsEnergy => "abs_energy".into(),
            Extractor::MeanAbsChange => "mean_abs_change".into(),
            Extractor::MeanChange => "mean_change".into(),
            Extractor::CountAboveMean => "count_above_mean".into(),
            Extractor::CountBelowMean => "count_below_mean".into(),
            Extractor::Skewness => "skewness".into(),
            Extractor::Kurtosis => "kurtosis".into(),
            Extractor::LongestStrikeAboveMean => "longest_strike_above_mean".into(),
            Extractor::LongestStrikeBelowMean => "longest_strike_below_mean".into(),
            Extractor::Autocorrelation { lag } => format!("autocorrelation__lag={lag}"),
            Extractor::Quantile { q } => format!("quantile__q={q}"),
            Extractor::ChangeQuantiles { ql, qh, abs, agg } => {
                format!("change_quantiles__ql={ql}__qh={qh}__abs={abs}__agg={}", agg.as_str())
            }
            Extractor::FftCoefficient { bin, part } => {
                format!("fft_coefficient__bin={bin}__part={}", part.as_str())
            }
            Extractor::AggLinearTrend { chunk, agg, attr } => format!(
                "agg_linear_trend__chunk={chunk}__agg={}__attr={}",
                agg.as_str(),
                attr.as_str()
            ),
            Extractor::CwtCoefficient { width, index } => {
                format!("cwt_coefficient__width={width}__index={index}")
            }
            Extractor::SampleEntropy => "sample_entropy".into(),
            Extractor::NumberPeaks { support } => format!("number_peaks__support={support}"),
            Extractor::IndexMassQuantile { q } => format!("index_mass_quantile__q={q}"),
        }
    }

    /// Parse a canonical rendering back into an extractor.
    pub fn parse(s: &str) -> Option<Self> {
        let mut parts = s.split("__");
        let name = parts.next()?;
        let params: Vec<(&str, &str)> = parts
            .map(|p| p.split_once('='))
            .collect::<Option<Vec<_>>>()?;
        let get = |i: usize, key: &str| -> Option<&str> {
            params
                .get(i)
                .and_then(|&(k, v)| if k == key { Some(v) } else { None })
        };
        let done = |count: usize| params.len() == count;
        let e = match name {
            "mean" if done(0) => Extractor::Mean,
            "variance" if done(0) => Extractor::Variance,
            "std_dev" if done(0) => Extractor::StdDev,
            "median" if done(0) => Extractor::Median,
            "min" if done(0) => Extractor::Min,
            "max" if done(0) => Extractor::Max,
            "abs_energy" if done(0) => Extractor::AbsEnergy,
            "mean_abs_change" if done(0) => Extractor::MeanAbsChange,
            "mean_change" if done(0) => Extractor::MeanChange,
            "count_above_mean" if done(0) => Extractor::CountAboveMean,
            "count_below_mean" if done(0) => Extractor::CountBelowMean,
            "skewness" if done(0) => Extractor::Skewness,
            "kurtosis" if done(0) => Extractor::Kurtosis,
            "longest_strike_above_mean" if done(0) => Extractor::LongestStrikeAboveMean,
            "longest_strike_below_mean" if done(0) => Extractor::LongestStrikeBelowMean,
            "sample_entropy" if done(0) => Extractor::SampleEntropy,
            "autocorrelation" if done(1) => Extractor::Autocorrelation {
                lag: get(0, "lag")?.parse().ok()?,
            },
            "quantile" if done(1) => Extractor::Quantile {
                q: get(0, "q")?.parse().ok()?,
            },
            "change_quantiles" if done(4) => Extractor::ChangeQuantiles {
                ql: get(0, "ql")?.parse().ok()?,
                qh: get(1, "qh")?.parse().ok()?,
                abs: get(2, "abs")?.parse().ok()?,
                agg: Agg::parse(get(3, "agg")?)?,
            },
            "fft_coefficient" if done(2) => Extractor::FftCoefficient {
                bin: get(0, "bin")?.parse().ok()?,
                part: FftPart::parse(get(1, "part")?)?,
            },
            "agg_linear_trend" if done(3) => Extractor::AggLinearTrend {
                chunk: get(0, "chunk")?.parse().ok()?,
                agg: Agg::parse(get(1, "agg")?)?,
                attr: TrendAttr::parse(get(2, "attr")?)?,
            },
            "cwt_coefficient" if done(2) => Extractor::CwtCoefficient {
                width: get(0, "width")?.parse().ok()?,
                index: get(1, "index")?.parse().ok()?,
            },
            "number_peaks" if done(1) => Extractor::NumberPeaks {
                support: get(0, "support")?.parse().ok()?,
            },
            "index_mass_quantile" if done(1) => Extractor::IndexMassQuantile {
                q: get(0, "q")?.parse().ok()?,
            },
            _ => return None,
        };
        Some(e)
    }

    /// Evaluate on one channel. Total: undefined cases return 0, and any
    /// non-finite result is imputed to 0.
    pub fn apply(&self, x: &[f64]) -> f64 {
        let v = self.apply_raw(x);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    }

    fn apply_raw(&self, x: &[f64]) -> f64 {
        match *self {
            Extractor::Mean => mean(x),
            Extractor::Variance => variance(x),
            Extractor::StdDev => variance(x).sqrt(),
            Extractor::Median => quantile(x, 0.5),
            Extractor::Min => x.iter().cloned().fold(f64::INFINITY, f64::min),
            Extractor::Max => x.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            Extractor::AbsEnergy => x.iter().map(|v| v * v).sum(),
            Extractor::MeanAbsChange => {
                if x.len() < 2 {
                    return 0.0;
                }
                x.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (x.len() - 1) as f64
            }
            Extractor::MeanChange => {
                if x.len() < 2 {
                    return 0.0;
                }
                (x[x.len() - 1] - x[0]) / (x.len() - 1) as f64
            }
            Extractor::CountAboveMean => {
                let m = mean(x);
                x.iter().filter(|&&v| v > m).count() as f64
            }
            Extractor::CountBelowMean => {
                let m = mean(x);
                x.iter().filter(|&&v| v < m).count() as f64
            }
            Extractor::Skewness => skewness(x),
            Extractor::Kurtosis => kurtosis(x),
            Extractor::LongestStrikeAboveMean => {
                let m = mean(x);
                longest_run(x.iter().map(|&v| v > m)) as f64
            }
            Extractor::LongestStrikeBelowMean => {
                let m = mean(x);
                longest_run(x.iter().map(|&v| v < m)) as f64
            }
            Extractor::Autocorrelation { lag } => autocorrelation(x, lag),
            Extractor::Quantile { q } => quantile(x, q),
            Extractor::ChangeQuantiles { ql, qh, abs, agg } => {
                change_quantiles(x, ql, qh, abs, agg)
            }
            Extractor::FftCoefficient { bin, part } => fft_coefficient(x, bin, part),
            Extractor::AggLinearTrend { chunk, agg, attr } => {
                agg_linear_trend(x, chunk, agg, attr)
            }
            Extractor::CwtCoefficient { width, index } => cwt_coefficient(x, width, index),
            Extractor::SampleEntropy => sample_entropy(x),
            Extractor::NumberPeaks { support } => number_peaks(x, support) as f64,
            Extractor::IndexMassQuantile { q } => index_mass_quantile(x, q),
        }
    }
}

/// One column of the feature matrix: an extractor bound to a channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDescriptor {
    pub channel: usize,
    pub extractor: Extractor,
}

impl FeatureDescriptor {
    pub fn new(channel: usize, extractor: Extractor) -> Result<Self> {
        if channel >= CHANNEL_COUNT {
            return Err(Error::invalid(format!(
                "channel {channel} out of range 0..{CHANNEL_COUNT}"
            )));
        }
        Ok(FeatureDescriptor { channel, extractor })
    }

    /// Canonical column name, e.g. `ch07__quantile__q=0.3`.
    pub fn render(&self) -> String {
        format!("ch{:02}__{}", self.channel, self.extractor.render())
    }

    /// Parse a rendering produced by [`FeatureDescriptor::render`].
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("unknown feature descriptor {s:?}"));
        let rest = s.strip_prefix("ch").ok_or_else(bad)?;
        if rest.len() < 4 || !rest[..2].bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let channel: usize = rest[..2].parse().map_err(|_| bad())?;
        let rest = rest[2..].strip_prefix("__").ok_or_else(bad)?;
        let extractor = Extractor::parse(rest).ok_or_else(bad)?;
        FeatureDescriptor::new(channel, extractor)
    }
}

impl fmt::Display for FeatureDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// The per-channel extractor set, in catalog order.
pub fn channel_extractors() -> Vec<Extractor> {
    let mut out = vec![
        Extractor::Mean,
        Extractor::Variance,
        Extractor::StdDev,
        Extractor::Median,
        Extractor::Min,
        Extractor::Max,
        Extractor::AbsEnergy,
        Extractor::MeanAbsChange,
        Extractor::MeanChange,
        Extractor::CountAboveMean,
        Extractor::CountBelowMean,
        Extractor::Skewness,
        Extractor::Kurtosis,
        Extractor::LongestStrikeAboveMean,
        Extractor::LongestStrikeBelowMean,
    ];
    for lag in [1, 2, 3, 5, 10] {
        out.push(Extractor::Autocorrelation { lag });
    }
    for q in [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9] {
        out.push(Extractor::Quantile { q });
    }
    for ql in [0.0, 0.1, 0.2, 0.3, 0.4] {
        for qh in [0.6, 0.7, 0.8, 0.9, 1.0] {
            for abs in [false, true] {
                for agg in [Agg::Mean, Agg::Var] {
                    out.push(Extractor::ChangeQuantiles { ql, qh, abs, agg });
                }
            }
        }
    }
    for bin in 0..=10 {
        for part in [FftPart::Abs, FftPart::Angle] {
            out.push(Extractor::FftCoefficient { bin, part });
        }
    }
    for chunk in [5, 10, 50] {
        for agg in [Agg::Mean, Agg::Var] {
            for attr in [TrendAttr::Slope, TrendAttr::Intercept, TrendAttr::Stderr] {
                out.push(Extractor::AggLinearTrend { chunk, agg, attr });
            }
        }
    }
    for width in [2, 5, 10, 20] {
        for index in 0..5 {
            out.push(Extractor::CwtCoefficient { width, index });
        }
    }
    out.push(Extractor::SampleEntropy);
    for support in [1, 3, 5] {
        out.push(Extractor::NumberPeaks { support });
    }
    for q in [0.25, 0.5, 0.75] {
        out.push(Extractor::IndexMassQuantile { q });
    }
    out
}

/// The default catalog: every extractor applied to every channel,
/// channel-major order.
pub fn catalog_default() -> Vec<FeatureDescriptor> {
    let per_channel = channel_extractors();
    let mut out = Vec::with_capacity(CHANNEL_COUNT * per_channel.len());
    for channel in 0..CHANNEL_COUNT {
        for e in &per_channel {
            out.push(FeatureDescriptor {
                channel,
                extractor: e.clone(),
            });
        }
    }
    out
}

// -------------------------------------------------------------- extractors

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population variance.
fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

/// Adjusted Fisher-Pearson skewness (the bias-corrected sample statistic);
/// needs at least 3 points and non-zero spread, otherwise 0.
fn skewness(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 3 {
        return 0.0;
    }
    let m = mean(x);
    let m2 = x.iter().map(|&v| (v - m).powi(2)).sum::<f64>() / n as f64;
    if m2 == 0.0 {
        return 0.0;
    }
    let m3 = x.iter().map(|&v| (v - m).powi(3)).sum::<f64>() / n as f64;
    let g1 = m3 / m2.powf(1.5);
    let n = n as f64;
    g1 * (n * (n - 1.0)).sqrt() / (n - 2.0)
}

/// Bias-corrected excess kurtosis; needs at least 4 points and non-zero
/// spread, otherwise 0.
fn kurtosis(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return 0.0;
    }
    let m = mean(x);
    let m2 = x.iter().map(|&v| (v - m).powi(2)).sum::<f64>() / n as f64;
    if m2 == 0.0 {
        return 0.0;
    }
    let m4 = x.iter().map(|&v| (v - m).powi(4)).sum::<f64>() / n as f64;
    let g2 = m4 / (m2 * m2) - 3.0;
    let n = n as f64;
    ((n + 1.0) * g2 + 6.0) * (n - 1.0) / ((n - 2.0) * (n - 3.0))
}

fn longest_run(flags: impl Iterator<Item = bool>) -> usize {
    let mut best = 0;
    let mut cur = 0;
    for f in flags {
        if f {
            cur += 1;
            best = best.max(cur);
        } else {
            cur = 0;
        }
    }
    best
}

/// Autocorrelation at `lag`, normalised by the overall variance:
/// `sum((x_t - mu)(x_{t+lag} - mu)) / ((n - lag) * var)`. Too-short or
/// constant input gives 0.
fn autocorrelation(x: &[f64], lag: usize) -> f64 {
    let n = x.len();
    if lag == 0 || n <= lag {
        return 0.0;
    }
    let m = mean(x);
    let var = variance(x);
    if var == 0.0 {
        return 0.0;
    }
    let s: f64 = (0..n - lag).map(|t| (x[t] - m) * (x[t + lag] - m)).sum();
    s / ((n - lag) as f64 * var)
}

/// Linear-interpolation quantile at level `q` (position `q * (n-1)` in the
/// sorted values).
fn quantile(x: &[f64], q: f64) -> f64 {
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    quantile_sorted(&sorted, q)
}

/// Quantile of an already-sorted slice, shared with the quantile transform.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Aggregate of consecutive changes restricted to the `[q(ql), q(qh)]`
/// corridor: a change counts when both endpoints sit inside the corridor.
fn change_quantiles(x: &[f64], ql: f64, qh: f64, abs: bool, agg: Agg) -> f64 {
    if ql >= qh || x.len() < 2 {
        return 0.0;
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let lo = quantile_sorted(&sorted, ql);
    let hi = quantile_sorted(&sorted, qh);
    let inside: Vec<bool> = x.iter().map(|&v| v >= lo && v <= hi).collect();
    let mut changes = Vec::new();
    for t in 0..x.len() - 1 {
        if inside[t] && inside[t + 1] {
            let d = x[t + 1] - x[t];
            changes.push(if abs { d.abs() } else { d });
        }
    }
    if changes.is_empty() {
        return 0.0;
    }
    match agg {
        Agg::Mean => mean(&changes),
        Agg::Var => variance(&changes),
    }
}

/// One DFT coefficient, computed directly: `X_k = sum_t x_t e^{-2pi i k t / n}`.
/// Bins past the real-spectrum length (`n/2`) give 0; the phase is reported
/// in radians.
fn fft_coefficient(x: &[f64], bin: usize, part: FftPart) -> f64 {
    let n = x.len();
    if bin > n / 2 {
        return 0.0;
    }
    let w = -2.0 * std::f64::consts::PI * bin as f64 / n as f64;
    let (mut re, mut im) = (0.0, 0.0);
    for (t, &v) in x.iter().enumerate() {
        let a = w * t as f64;
        re += v * a.cos();
        im += v * a.sin();
    }
    match part {
        FftPart::Abs => (re * re + im * im).sqrt(),
        FftPart::Angle => im.atan2(re),
    }
}

/// Least squares of per-chunk aggregates against the chunk index. The last
/// short chunk is kept. Fewer than 2 chunks (or 3 for the standard error)
/// gives 0.
fn agg_linear_trend(x: &[f64], chunk: usize, agg: Agg, attr: TrendAttr) -> f64 {
    if chunk == 0 {
        return 0.0;
    }
    let ys: Vec<f64> = x
        .chunks(chunk)
        .map(|c| match agg {
            Agg::Mean => mean(c),
            Agg::Var => variance(c),
        })
        .collect();
    let k = ys.len();
    if k < 2 {
        return 0.0;
    }
    let xbar = (k - 1) as f64 / 2.0;
    let ybar = mean(&ys);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (i, &y) in ys.iter().enumerate() {
        let dx = i as f64 - xbar;
        sxx += dx * dx;
        sxy += dx * (y - ybar);
    }
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    match attr {
        TrendAttr::Slope => slope,
        TrendAttr::Intercept => intercept,
        TrendAttr::Stderr => {
            if k < 3 {
                return 0.0;
            }
            let rss: f64 = ys
                .iter()
                .enumerate()
                .map(|(i, &y)| {
                    let r = y - (intercept + slope * i as f64);
                    r * r
                })
                .sum();
            (rss / (k - 2) as f64 / sxx).sqrt()
        }
    }
}

/// Ricker (Mexican-hat) wavelet with unit normalisation, `points` samples
/// wide, centred (half-sample offset when `points` is even).
fn ricker(points: usize, width: f64) -> Vec<f64> {
    let a = 2.0 / ((3.0 * width).sqrt() * std::f64::consts::PI.powf(0.25));
    (0..points)
        .map(|j| {
            let t = j as f64 - (points - 1) as f64 / 2.0;
            let r = t / width;
            a * (1.0 - r * r) * (-t * t / (2.0 * width * width)).exp()
        })
        .collect()
}

/// Wavelet response at position `index`: same-size convolution of the
/// channel with a Ricker kernel of length `min(10*width, n)`, using reflect
/// padding (edge sample not repeated) at the boundaries.
fn cwt_coefficient(x: &[f64], width: usize, index: usize) -> f64 {
    let n = x.len();
    if index >= n || width == 0 {
        return 0.0;
    }
    let m = (10 * width).min(n);
    let kernel = ricker(m, width as f64);
    let off = (m - 1) / 2;
    let reflect = |i: isize| -> f64 {
        let n = n as isize;
        let i = if i < 0 { -i } else if i >= n { 2 * (n - 1) - i } else { i };
        x[i as usize]
    };
    kernel
        .iter()
        .enumerate()
        .map(|(j, &k)| k * reflect(index as isize + off as isize - j as isize))
        .sum()
}

/// Sample entropy with template length 2 and tolerance `0.2 * std`:
/// `-ln(A/B)` where `B` counts close template pairs of length 2 and `A` of
/// length 3 (Chebyshev distance, self-matches excluded). Undefined cases
/// (too short, no matches) give 0.
fn sample_entropy(x: &[f64]) -> f64 {
    const M: usize = 2;
    let n = x.len();
    if n < M + 2 {
        return 0.0;
    }
    let r = 0.2 * variance(x).sqrt();
    let count = n - M; // templates of length M and M+1 both indexable here
    let close = |i: usize, j: usize, len: usize| -> bool {
        (0..len).all(|t| (x[i + t] - x[j + t]).abs() <= r)
    };
    let mut b = 0u64;
    let mut a = 0u64;
    for i in 0..count {
        for j in 0..count {
            if i == j {
                continue;
            }
            if close(i, j, M) {
                b += 1;
                if close(i, j, M + 1) {
                    a += 1;
                }
            }
        }
    }
    if a == 0 || b == 0 {
        return 0.0;
    }
    -((a as f64 / b as f64).ln())
}

/// Number of peaks with the given support: positions strictly greater than
/// all `support` neighbours on each side.
fn number_peaks(x: &[f64], support: usize) -> usize {
    let n = x.len();
    if support == 0 || n < 2 * support + 1 {
        return 0;
    }
    (support..n - support)
        .filter(|&i| (1..=support).all(|k| x[i] > x[i - k] && x[i] > x[i + k]))
        .count()
}

/// Relative index where the cumulative absolute mass first reaches the
/// fraction `q`; 0 when the channel is all zeros.
fn index_mass_quantile(x: &[f64], q: f64) -> f64 {
    let total: f64 = x.iter().map(|v| v.abs()).sum();
    if total == 0.0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for (i, v) in x.iter().enumerate() {
        acc += v.abs();
        if acc / total >= q {
            return (i + 1) as f64 / x.len() as f64;
        }
    }
    1.0
}

// ----------------------------------------------------------- matrix type

/// Fixed-length feature vectors for a set of samples, with the descriptors
/// that produced each column.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub sample_ids: Vec<String>,
    pub labels: Vec<char>,
    pub descriptors: Vec<FeatureDescriptor>,
    /// Row-major values: `values[sample][feature]`.
    pub values: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn new(
        sample_ids: Vec<String>,
        labels: Vec<char>,
        descriptors: Vec<FeatureDescriptor>,
        values: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if sample_ids.len() != labels.len() || sample_ids.len() != values.len() {
            return Err(Error::invalid(format!(
                "inconsistent row counts: {} ids, {} labels, {} rows",
                sample_ids.len(),
                labels.len(),
                values.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for d in &descriptors {
            if !seen.insert(d.render()) {
                return Err(Error::invalid(format!("duplicate descriptor {}", d.render())));
            }
        }
        for (i, row) in values.iter().enumerate() {
            if row.len() != descriptors.len() {
                return Err(Error::invalid(format!(
                    "row {i} has {} values but {} descriptors",
                    row.len(),
                    descriptors.len()
                )));
            }
            for (j, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::invalid(format!(
                        "non-finite feature value at row {i}, column {}",
                        descriptors[j].render()
                    )));
                }
            }
        }
        Ok(FeatureMatrix {
            sample_ids,
            labels,
            descriptors,
            values,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.values.len()
    }

    pub fn n_features(&self) -> usize {
        self.descriptors.len()
    }

    /// One feature column.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[j]).collect()
    }
}

/// Evaluate one descriptor on one sample.
pub fn extract_single(sample: &Sample, descriptor: &FeatureDescriptor) -> f64 {
    descriptor.extractor.apply(sample.channel(descriptor.channel))
}

/// Evaluate the full descriptor list on every sample; rows keep the sample
/// order, columns the descriptor order. Parallel over samples, bit-wise
/// deterministic regardless of worker count.
pub fn extract(ds: &Dataset, descriptors: &[FeatureDescriptor]) -> Result<FeatureMatrix> {
    if descriptors.is_empty() {
        return Err(Error::invalid("descriptor list is empty"));
    }
    let values: Vec<Vec<f64>> = ds
        .samples
        .par_iter()
        .map(|s| descriptors.iter().map(|d| extract_single(s, d)).collect())
        .collect();
    FeatureMatrix::new(
        ds.samples.iter().map(|s| s.id.clone()).collect(),
        ds.labels(),
        descriptors.to_vec(),
        values,
    )
}

// ------------------------------------------------------------ matrix i/o

/// Write a feature matrix as CSV: `sample_id,label,<descriptor...>` header,
/// floats rendered with 17 significant digits.
pub fn write_feature_matrix(fm: &FeatureMatrix, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    let mut header = vec!["sample_id".to_string(), "label".to_string()];
    header.extend(fm.descriptors.iter().map(|d| d.render()));
    w.write_record(&header)
        .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    for i in 0..fm.n_samples() {
        let mut rec = vec![fm.sample_ids[i].clone(), fm.labels[i].to_string()];
        rec.extend(fm.values[i].iter().map(|&v| fmt_g17(v)));
        w.write_record(&rec)
            .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Read a feature matrix written by [`write_feature_matrix`].
pub fn read_feature_matrix(path: &Path) -> Result<FeatureMatrix> {
    let paths = path.display().to_string();
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::invalid(format!("{paths}: {e}")))?;
    let headers = r
        .headers()
        .map_err(|e| Error::invalid(format!("{paths}: {e}")))?
        .clone();
    if headers.len() < 3 || &headers[0] != "sample_id" || &headers[1] != "label" {
        return Err(Error::Parse {
            path: paths,
            line: 1,
            message: "expected header starting with sample_id,label".into(),
        });
    }
    let descriptors: Vec<FeatureDescriptor> = headers
        .iter()
        .skip(2)
        .map(FeatureDescriptor::parse)
        .collect::<Result<_>>()?;
    let mut sample_ids = Vec::new();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            path: paths.clone(),
            line,
            message: e.to_string(),
        })?;
        if rec.len() != headers.len() {
            return Err(Error::Parse {
                path: paths.clone(),
                line,
                message: format!("expected {} fields, got {}", headers.len(), rec.len()),
            });
        }
        sample_ids.push(rec[0].to_string());
        let mut chars = rec[1].chars();
        let label = match (chars.next(), chars.next()) {
            (Some(c), None) => c,
            _ => {
                return Err(Error::Parse {
                    path: paths.clone(),
                    line,
                    message: format!("label {:?} is not a single character", &rec[1]),
                })
            }
        };
        labels.push(label);
        let mut row = Vec::with_capacity(headers.len() - 2);
        for f in rec.iter().skip(2) {
            row.push(parse_f64(f, &paths, line)?);
        }
        values.push(row);
    }
    FeatureMatrix::new(sample_ids, labels, descriptors, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CaseMode, Dependency, LabelAlphabet, Role, SplitSpec};

    fn close(a: f64, b: f64) {
        let tol = 1e-12 * b.abs().max(1.0);
        assert!((a - b).abs() < tol, "got {a}, expected {b}");
    }

    const X: [f64; 5] = [1.0, 2.0, 4.0, 8.0, 9.0];

    // --------------------------------------------------- basic statistics

    #[test]
    fn basic_statistics_closed_forms() {
        close(Extractor::Mean.apply(&X), 4.8);
        close(Extractor::Variance.apply(&X), 10.16);
        close(Extractor::StdDev.apply(&X), 10.16f64.sqrt());
        close(Extractor::Median.apply(&X), 4.0);
        close(Extractor::Median.apply(&[1.0, 2.0, 4.0, 8.0]), 3.0);
        close(Extractor::Min.apply(&X), 1.0);
        close(Extractor::Max.apply(&X), 9.0);
        close(Extractor::AbsEnergy.apply(&X), 166.0);
        close(Extractor::MeanAbsChange.apply(&X), 2.0);
        close(Extractor::MeanChange.apply(&X), 2.0);
        close(Extractor::CountAboveMean.apply(&X), 2.0);
        close(Extractor::CountBelowMean.apply(&X), 3.0);
        close(Extractor::LongestStrikeAboveMean.apply(&X), 2.0);
        close(Extractor::LongestStrikeBelowMean.apply(&X), 3.0);
    }

    #[test]
    fn moment_statistics_match_reference_values() {
        // bias-corrected statistics, frozen from an independent evaluation
        close(Extractor::Skewness.apply(&X), 0.27176875823526248);
        close(Extractor::Kurtosis.apply(&X), -2.6802653605307207);
    }

    #[test]
    fn autocorrelation_matches_reference_values() {
        close(
            Extractor::Autocorrelation { lag: 1 }.apply(&X),
            0.58464566929133865,
        );
        close(
            Extractor::Autocorrelation { lag: 2 }.apply(&X),
            -0.30446194225721784,
        );
    }

    #[test]
    fn quantiles_interpolate_linearly() {
        close(Extractor::Quantile { q: 0.5 }.apply(&X), 4.0);
        close(Extractor::Quantile { q: 0.25 }.apply(&X), 2.0);
        close(Extractor::Quantile { q: 0.1 }.apply(&X), 1.4);
        close(Extractor::Quantile { q: 0.0 }.apply(&X), 1.0);
        close(Extractor::Quantile { q: 1.0 }.apply(&X), 9.0);
    }

    #[test]
    fn change_quantiles_matches_reference_values() {
        let x = [0.0, 1.0, 0.0, 1.0, 0.0, 10.0];
        let cq = |ql, qh, abs, agg| Extractor::ChangeQuantiles { ql, qh, abs, agg }.apply(&x);
        close(cq(0.0, 0.8, true, Agg::Mean), 1.0);
        close(cq(0.0, 0.8, true, Agg::Var), 0.0);
        close(cq(0.0, 0.8, false, Agg::Mean), 0.0);

        let x3 = [3.0, -2.0, 5.0, 1.0, -4.0, 2.0, 0.5, -1.5];
        let cq3 = |ql, qh, abs, agg| Extractor::ChangeQuantiles { ql, qh, abs, agg }.apply(&x3);
        close(cq3(0.1, 0.9, true, Agg::Mean), 2.8333333333333335);
        close(cq3(0.1, 0.9, false, Agg::Var), 2.3888888888888888);
    }

    #[test]
    fn fft_pure_tone_concentrates_in_one_bin() {
        let n = 30;
        let k = 3;
        let x: Vec<f64> = (0..n)
            .map(|t| (2.0 * std::f64::consts::PI * k as f64 * t as f64 / n as f64).sin())
            .collect();
        close(
            Extractor::FftCoefficient { bin: 3, part: FftPart::Abs }.apply(&x),
            15.0,
        );
        // a sine tone lands at phase -pi/2
        close(
            Extractor::FftCoefficient { bin: 3, part: FftPart::Angle }.apply(&x),
            -std::f64::consts::FRAC_PI_2,
        );
        let other = Extractor::FftCoefficient { bin: 5, part: FftPart::Abs }.apply(&x);
        assert!(other.abs() < 1e-9);
        // bin 0 is the plain sum
        close(Extractor::FftCoefficient { bin: 0, part: FftPart::Abs }.apply(&X), 24.0);
        // bins past the spectrum give 0
        close(Extractor::FftCoefficient { bin: 10, part: FftPart::Abs }.apply(&X), 0.0);
    }

    #[test]
    fn linear_trend_on_chunk_means() {
        // x_t = 2t: chunk-5 means 4, 14, 24, 34 -> slope 10, intercept 4
        let x: Vec<f64> = (0..20).map(|t| 2.0 * t as f64).collect();
        let alt = |agg, attr| Extractor::AggLinearTrend { chunk: 5, agg, attr }.apply(&x);
        close(alt(Agg::Mean, TrendAttr::Slope), 10.0);
        close(alt(Agg::Mean, TrendAttr::Intercept), 4.0);
        close(alt(Agg::Mean, TrendAttr::Stderr), 0.0);

        // x_t = t^2: frozen from an independent least-squares evaluation
        let x: Vec<f64> = (0..20).map(|t| (t * t) as f64).collect();
        let alt = |agg, attr| Extractor::AggLinearTrend { chunk: 5, agg, attr }.apply(&x);
        close(alt(Agg::Mean, TrendAttr::Slope), 95.0);
        close(alt(Agg::Mean, TrendAttr::Intercept), -19.0);
        close(alt(Agg::Mean, TrendAttr::Stderr), 15.811388300841905);

        // one chunk only -> imputed
        close(
            Extractor::AggLinearTrend { chunk: 50, agg: Agg::Mean, attr: TrendAttr::Slope }
                .apply(&x),
            0.0,
        );
    }

    #[test]
    fn cwt_matches_reference_values() {
        let x = [0.0, 1.0, 2.0, 1.0, 0.0, -1.0, -2.0, -1.0, 0.0, 1.0, 2.0, 1.0];
        let expect_w2 = [
            0.89093667341187033,
            0.89093667341187022,
            1.7328119943229643,
            2.0158838412677742,
            0.7178611344793947,
        ];
        let expect_w5 = [
            2.403702888055824,
            2.4037028880558235,
            1.8905819316358208,
            1.0768090354249249,
            0.22367725750908457,
        ];
        for (i, &e) in expect_w2.iter().enumerate() {
            close(Extractor::CwtCoefficient { width: 2, index: i }.apply(&x), e);
        }
        for (i, &e) in expect_w5.iter().enumerate() {
            close(Extractor::CwtCoefficient { width: 5, index: i }.apply(&x), e);
        }
    }

    #[test]
    fn sample_entropy_matches_hand_count() {
        // templates of [1,2,1,2,1,5]: 4 close pairs at length 2, 2 at
        // length 3 -> -ln(2/4)
        close(
            Extractor::SampleEntropy.apply(&[1.0, 2.0, 1.0, 2.0, 1.0, 5.0]),
            std::f64::consts::LN_2,
        );
        close(Extractor::SampleEntropy.apply(&[3.0; 6]), 0.0);
        close(Extractor::SampleEntropy.apply(&[1.0, 2.0, 3.0]), 0.0);
    }

    #[test]
    fn peaks_and_mass_quantile() {
        let x = [1.0, 3.0, 1.0, 4.0, 1.0];
        close(Extractor::NumberPeaks { support: 1 }.apply(&x), 2.0);
        close(Extractor::NumberPeaks { support: 2 }.apply(&x), 0.0);
        close(Extractor::IndexMassQuantile { q: 0.5 }.apply(&[1.0, 1.0, 1.0, 1.0]), 0.5);
        close(Extractor::IndexMassQuantile { q: 0.25 }.apply(&[0.0, 0.0, 4.0]), 1.0);
        close(Extractor::IndexMassQuantile { q: 0.5 }.apply(&[0.0, 0.0]), 0.0);
    }

    // ------------------------------------------------- degenerate inputs

    #[test]
    fn degenerate_inputs_impute_zero() {
        let one = [7.5];
        close(Extractor::Variance.apply(&one), 0.0);
        close(Extractor::MeanAbsChange.apply(&one), 0.0);
        close(Extractor::MeanChange.apply(&one), 0.0);
        close(Extractor::Skewness.apply(&[2.0, 2.0, 2.0, 2.0]), 0.0);
        close(Extractor::Kurtosis.apply(&[2.0, 2.0, 2.0, 2.0]), 0.0);
        close(Extractor::Skewness.apply(&[1.0, 2.0]), 0.0);
        close(Extractor::Autocorrelation { lag: 10 }.apply(&[1.0; 8]), 0.0);
        close(Extractor::Autocorrelation { lag: 1 }.apply(&[3.0; 5]), 0.0);
        // every catalog extractor stays finite on hostile inputs
        for e in channel_extractors() {
            for x in [&[0.0][..], &[1e300, -1e300], &[5.0; 4]] {
                let v = e.apply(x);
                assert!(v.is_finite(), "{} not finite on {x:?}", e.render());
            }
        }
    }

    // --------------------------------------------- translation properties

    #[test]
    fn translation_properties() {
        let shifted: Vec<f64> = X.iter().map(|v| v + 3.5).collect();
        close(Extractor::Mean.apply(&shifted), 4.8 + 3.5);
        close(Extractor::Variance.apply(&shifted), 10.16);
        for bin in 1..=4 {
            let a = Extractor::FftCoefficient { bin, part: FftPart::Abs }.apply(&X);
            let b = Extractor::FftCoefficient { bin, part: FftPart::Abs }.apply(&shifted);
            close(b, a);
        }
    }

    // ---------------------------------------------------------- catalog

    #[test]
    fn catalog_has_documented_size_and_unique_stable_renderings() {
        let per_channel = channel_extractors();
        assert_eq!(per_channel.len(), 196);
        assert!(per_channel.len() >= 150);
        let all = catalog_default();
        assert_eq!(all.len(), per_channel.len() * CHANNEL_COUNT);

        let mut seen = std::collections::HashSet::new();
        for d in &all {
            assert!(seen.insert(d.render()), "duplicate {}", d.render());
        }
        // stability: a fresh catalog renders identically
        let again: Vec<String> = catalog_default().iter().map(|d| d.render()).collect();
        let first: Vec<String> = all.iter().map(|d| d.render()).collect();
        assert_eq!(first, again);
    }

    #[test]
    fn descriptor_renderings_parse_back() {
        for d in catalog_default() {
            let s = d.render();
            let back = FeatureDescriptor::parse(&s).unwrap();
            assert_eq!(back, d, "{s}");
        }
        assert!(FeatureDescriptor::parse("ch13__mean").is_err());
        assert!(FeatureDescriptor::parse("ch00__nonsense").is_err());
        assert!(FeatureDescriptor::parse("mean").is_err());
        assert!(FeatureDescriptor::parse("ch00__quantile__lag=1").is_err());
    }

    #[test]
    fn example_renderings() {
        let d = FeatureDescriptor::new(
            12,
            Extractor::ChangeQuantiles { ql: 0.1, qh: 0.6, abs: true, agg: Agg::Mean },
        )
        .unwrap();
        assert_eq!(d.render(), "ch12__change_quantiles__ql=0.1__qh=0.6__abs=true__agg=mean");
        let d = FeatureDescriptor::new(0, Extractor::Quantile { q: 0.3 }).unwrap();
        assert_eq!(d.render(), "ch00__quantile__q=0.3");
    }

    // --------------------------------------------------------- extraction

    fn toy_dataset() -> Dataset {
        let mk = |id: &str, label: char, scale: f64| {
            let values = (0..CHANNEL_COUNT)
                .map(|c| {
                    (0..40)
                        .map(|t| scale * ((c + 1) as f64 * t as f64 * 0.2).sin() + c as f64)
                        .collect()
                })
                .collect();
            Sample::from_values(id, label, None, values).unwrap()
        };
        Dataset::new(
            vec![mk("s0", 'a', 1.0), mk("s1", 'b', 2.0), mk("s2", 'a', 0.5)],
            LabelAlphabet::new(CaseMode::Lower),
            SplitSpec::new(0, Dependency::WriterDependent, Role::Train).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn extraction_follows_sample_and_descriptor_order() {
        let ds = toy_dataset();
        let descriptors = vec![
            FeatureDescriptor::new(0, Extractor::Mean).unwrap(),
            FeatureDescriptor::new(3, Extractor::Max).unwrap(),
        ];
        let fm = extract(&ds, &descriptors).unwrap();
        assert_eq!(fm.sample_ids, ["s0", "s1", "s2"]);
        assert_eq!(fm.labels, ['a', 'b', 'a']);
        assert_eq!(fm.n_features(), 2);
        for (i, s) in ds.samples.iter().enumerate() {
            close(fm.values[i][0], Extractor::Mean.apply(s.channel(0)));
            close(fm.values[i][1], Extractor::Max.apply(s.channel(3)));
        }
    }

    #[test]
    fn extraction_is_deterministic() {
        let ds = toy_dataset();
        let descriptors = catalog_default();
        let a = extract(&ds, &descriptors).unwrap();
        let b = extract(&ds, &descriptors).unwrap();
        for (ra, rb) in a.values.iter().zip(&b.values) {
            for (va, vb) in ra.iter().zip(rb) {
                assert_eq!(va.to_bits(), vb.to_bits());
            }
        }
        // constant channel sanity: mean of channel c is c for scale 0 rows
        assert!(extract(&ds, &[]).is_err());
    }

    #[test]
    fn feature_matrix_round_trips_exactly() {
        let ds = toy_dataset();
        let descriptors: Vec<FeatureDescriptor> = catalog_default().into_iter().take(40).collect();
        let fm = extract(&ds, &descriptors).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.csv");
        write_feature_matrix(&fm, &path).unwrap();
        let back = read_feature_matrix(&path).unwrap();
        assert_eq!(back.sample_ids, fm.sample_ids);
        assert_eq!(back.labels, fm.labels);
        assert_eq!(back.descriptors, fm.descriptors);
        for (ra, rb) in fm.values.iter().zip(&back.values) {
            for (va, vb) in ra.iter().zip(rb) {
                assert_eq!(va.to_bits(), vb.to_bits());
            }
        }
    }

    #[test]
    fn feature_matrix_rejects_bad_shapes() {
        let d = vec![FeatureDescriptor::new(0, Extractor::Mean).unwrap()];
        assert!(FeatureMatrix::new(
            vec!["a".into()],
            vec!['a'],
            d.clone(),
            vec![vec![1.0, 2.0]],
        )
        .is_err());
        assert!(FeatureMatrix::new(
            vec!["a".into()],
            vec!['a'],
            d.clone(),
            vec![vec![f64::NAN]],
        )
        .is_err());
        let dup = vec![d[0].clone(), d[0].clone()];
        assert!(FeatureMatrix::new(
            vec!["a".into()],
            vec!['a'],
            dup,
            vec![vec![1.0, 2.0]],
        )
        .is_err());
    }
}
