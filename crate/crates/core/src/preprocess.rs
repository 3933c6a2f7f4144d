//! Signal conditioning: zero-phase Butterworth high-pass filtering,
//! moving-average smoothing, and length-based outlier trimming.

use crate::data::{Dataset, Sample, SubsetStats, CHANNEL_COUNT};
use crate::{Error, Result};

/// High-pass filter parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterSpec {
    /// Cut-off frequency in Hz; must sit below the Nyquist frequency.
    pub cutoff_hz: f64,
    /// Sampling rate of the recordings in Hz.
    pub sampling_hz: f64,
    /// Butterworth order (1 or more; 2 is the usual choice).
    pub order: usize,
    /// Channel ids the filter touches; other channels pass unchanged.
    pub targets: Vec<usize>,
}

impl FilterSpec {
    pub fn new(cutoff_hz: f64, sampling_hz: f64, order: usize, targets: Vec<usize>) -> Result<Self> {
        if !(sampling_hz.is_finite() && sampling_hz > 0.0) {
            return Err(Error::invalid(format!(
                "sampling rate must be positive, got {sampling_hz}"
            )));
        }
        if !(cutoff_hz.is_finite() && cutoff_hz > 0.0 && cutoff_hz < sampling_hz / 2.0) {
            return Err(Error::invalid(format!(
                "cut-off must lie in (0, {}), got {cutoff_hz}",
                sampling_hz / 2.0
            )));
        }
        if order == 0 {
            return Err(Error::invalid("filter order must be at least 1"));
        }
        let mut seen = std::collections::HashSet::new();
        for &t in &targets {
            if t >= CHANNEL_COUNT {
                return Err(Error::invalid(format!(
                    "target channel {t} out of range 0..{CHANNEL_COUNT}"
                )));
            }
            if !seen.insert(t) {
                return Err(Error::invalid(format!("duplicate target channel {t}")));
            }
        }
        if targets.is_empty() {
            return Err(Error::invalid("filter needs at least one target channel"));
        }
        Ok(FilterSpec {
            cutoff_hz,
            sampling_hz,
            order,
            targets,
        })
    }

    /// Both accelerometers (channels 0-5), the usual targets for removing
    /// the constant gravity offset.
    pub fn accelerometer_targets() -> Vec<usize> {
        (0..6).collect()
    }

    /// Shortest input the filter accepts; shorter recordings pass through.
    pub fn min_input_len(&self) -> usize {
        3 * self.order
    }
}

/// One second-order digital filter section (`a0` normalised to 1; a
/// first-order section stores zero in the trailing coefficients).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    /// Steady-state delay-line values for a constant input of 1, transposed
    /// direct form II. Scaling these by the first input sample lets the
    /// filter start without a step transient.
    fn unit_step_state(&self) -> [f64; 2] {
        let g = (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[1] + self.a[2]);
        let z2 = self.b[2] - self.a[2] * g;
        let z1 = self.b[1] - self.a[1] * g + z2;
        [z1, z2]
    }

    /// Run the section over `x` with initial state scaled by `x0`.
    fn run(&self, x: &[f64], x0: f64) -> Vec<f64> {
        let [mut z1, mut z2] = self.unit_step_state();
        z1 *= x0;
        z2 *= x0;
        let mut y = Vec::with_capacity(x.len());
        for &xi in x {
            let yi = self.b[0] * xi + z1;
            z1 = self.b[1] * xi - self.a[1] * yi + z2;
            z2 = self.b[2] * xi - self.a[2] * yi;
            y.push(yi);
        }
        y
    }
}

/// Butterworth high-pass sections for the given spec, as a cascade of
/// second-order sections (plus one first-order section for odd orders).
///
/// The analog prototype poles sit on the unit circle at the Butterworth
/// angles; the low-pass to high-pass substitution and the bilinear mapping
/// (with the cut-off prewarped through `tan`) turn each conjugate pair into
/// one digital biquad.
pub fn butterworth_highpass_sections(spec: &FilterSpec) -> Vec<Biquad> {
    let n = spec.order;
    let k = (std::f64::consts::PI * spec.cutoff_hz / spec.sampling_hz).tan();
    let mut sections = Vec::with_capacity(n.div_ceil(2));
    // conjugate pole pairs of the analog prototype
    for i in 0..n / 2 {
        let theta = std::f64::consts::PI * (2 * i + 1 + n) as f64 / (2 * n) as f64;
        // prototype pair: s^2 - 2 cos(theta) s + 1; after s -> k/s:
        // s^2 + c1 s + c0 with c1 = -2 cos(theta) k, c0 = k^2
        let c1 = -2.0 * theta.cos() * k;
        let c0 = k * k;
        let d0 = 1.0 + c1 + c0;
        sections.push(Biquad {
            b: [1.0 / d0, -2.0 / d0, 1.0 / d0],
            a: [1.0, (2.0 * c0 - 2.0) / d0, (1.0 - c1 + c0) / d0],
        });
    }
    if n % 2 == 1 {
        // real pole at -1: s/(s + k) after the substitutions
        let d0 = 1.0 + k;
        sections.push(Biquad {
            b: [1.0 / d0, -1.0 / d0, 0.0],
            a: [1.0, (k - 1.0) / d0, 0.0],
        });
    }
    sections
}

/// Forward-backward application of one section with odd-reflection padding,
/// so the result has zero phase shift and squared magnitude response.
fn filtfilt_section(section: &Biquad, x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let padlen = 9.min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * padlen);
    for j in (1..=padlen).rev() {
        ext.push(2.0 * x[0] - x[j]);
    }
    ext.extend_from_slice(x);
    for j in 1..=padlen {
        ext.push(2.0 * x[n - 1] - x[n - 1 - j]);
    }

    let forward = section.run(&ext, ext[0]);
    let mut rev: Vec<f64> = forward.into_iter().rev().collect();
    rev = section.run(&rev, rev[0]);
    rev.reverse();
    rev[padlen..padlen + n].to_vec()
}

/// Zero-phase high-pass filter over the given filter's target channels.
///
/// Returns the filtered sample and whether the filter ran; recordings
/// shorter than [`FilterSpec::min_input_len`] pass through unchanged
/// (`false`), which callers should surface as a warning.
pub fn highpass(sample: &Sample, spec: &FilterSpec) -> Result<(Sample, bool)> {
    if sample.len() < spec.min_input_len() {
        return Ok((sample.clone(), false));
    }
    let sections = butterworth_highpass_sections(spec);
    let mut values: Vec<Vec<f64>> = sample.channels().iter().map(|c| c.values.clone()).collect();
    for &t in &spec.targets {
        let mut y = values[t].clone();
        for s in &sections {
            y = filtfilt_section(s, &y);
        }
        values[t] = y;
    }
    let out = sample.with_values(values)?;
    Ok((out, true))
}

/// Filter every sample of a dataset; returns the new dataset and one
/// warning per recording that was too short to filter.
pub fn highpass_dataset(ds: &Dataset, spec: &FilterSpec) -> Result<(Dataset, Vec<String>)> {
    let mut samples = Vec::with_capacity(ds.samples.len());
    let mut warnings = Vec::new();
    for s in &ds.samples {
        let (filtered, applied) = highpass(s, spec)?;
        if !applied {
            warnings.push(format!(
                "sample {}: length {} below filter minimum {}, passed through unfiltered",
                s.id,
                s.len(),
                spec.min_input_len()
            ));
        }
        samples.push(filtered);
    }
    Ok((
        Dataset::new(samples, ds.alphabet.clone(), ds.split)?,
        warnings,
    ))
}

/// Centred moving average with truncated edge windows, applied to every
/// channel. `window` must be odd; 1 is the identity.
pub fn moving_average(sample: &Sample, window: usize) -> Result<Sample> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::invalid(format!(
            "moving-average window must be odd and positive, got {window}"
        )));
    }
    if window == 1 {
        return Ok(sample.clone());
    }
    let half = window / 2;
    let n = sample.len();
    let values = sample
        .channels()
        .iter()
        .map(|ch| {
            // prefix sums keep each output O(1)
            let mut prefix = Vec::with_capacity(n + 1);
            prefix.push(0.0);
            for &v in &ch.values {
                prefix.push(prefix.last().unwrap() + v);
            }
            (0..n)
                .map(|i| {
                    let lo = i.saturating_sub(half);
                    let hi = (i + half).min(n - 1);
                    (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64
                })
                .collect()
        })
        .collect();
    sample.with_values(values)
}

/// Smooth every sample of a dataset.
pub fn moving_average_dataset(ds: &Dataset, window: usize) -> Result<Dataset> {
    let samples = ds
        .samples
        .iter()
        .map(|s| moving_average(s, window))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples, ds.alphabet.clone(), ds.split)
}

/// Length bounds for outlier trimming; recordings with
/// `min_len <= len <= max_len` are kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrimSpec {
    pub min_len: usize,
    pub max_len: usize,
}

impl TrimSpec {
    pub fn new(min_len: usize, max_len: usize) -> Result<Self> {
        if min_len > max_len {
            return Err(Error::invalid(format!(
                "trim bounds reversed: min {min_len} > max {max_len}"
            )));
        }
        Ok(TrimSpec { min_len, max_len })
    }
}

/// Why a recording was discarded during trimming.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Discard {
    pub id: String,
    pub len: usize,
    pub reason: String,
}

/// Drop length outliers; returns the surviving dataset plus a report naming
/// every discarded recording and the bound it broke.
pub fn trim_outliers(ds: &Dataset, spec: &TrimSpec) -> Result<(Dataset, Vec<Discard>)> {
    let mut kept = Vec::new();
    let mut discards = Vec::new();
    for s in &ds.samples {
        let len = s.len();
        if len < spec.min_len {
            discards.push(Discard {
                id: s.id.clone(),
                len,
                reason: format!("shorter than {} timesteps", spec.min_len),
            });
        } else if len > spec.max_len {
            discards.push(Discard {
                id: s.id.clone(),
                len,
                reason: format!("longer than {} timesteps", spec.max_len),
            });
        } else {
            kept.push(s.clone());
        }
    }
    if kept.is_empty() {
        return Err(Error::invalid(
            "trimming discarded every sample; bounds are too tight",
        ));
    }
    Ok((
        Dataset::new(kept, ds.alphabet.clone(), ds.split)?,
        discards,
    ))
}

/// Derive trim bounds from length statistics: the upper bound is
/// `round(mean + k_sigma * std)`, the lower bound is given.
pub fn derive_trim_spec(stats: &SubsetStats, k_sigma: f64, min_len: usize) -> Result<TrimSpec> {
    if !(k_sigma.is_finite() && k_sigma >= 0.0) {
        return Err(Error::invalid(format!(
            "k_sigma must be non-negative, got {k_sigma}"
        )));
    }
    let upper = (stats.mean_len + k_sigma * stats.std_len).round();
    if upper < min_len as f64 {
        return Err(Error::invalid(format!(
            "derived upper bound {upper} below lower bound {min_len}"
        )));
    }
    TrimSpec::new(min_len, upper as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CaseMode, Dependency, LabelAlphabet, Role, SplitSpec};

    fn sample_from_channel(ch0: Vec<f64>) -> Sample {
        let n = ch0.len();
        let mut values = vec![vec![0.5; n]; CHANNEL_COUNT];
        values[0] = ch0;
        Sample::from_values("s0", 'a', None, values).unwrap()
    }

    fn spec(cutoff: f64, fs: f64, order: usize) -> FilterSpec {
        FilterSpec::new(cutoff, fs, order, vec![0]).unwrap()
    }

    /// Analytic amplitude gain of the zero-phase (forward-backward) filter
    /// at `f` Hz: the squared Butterworth magnitude, with the frequency
    /// axis warped the same way the bilinear transform warps it.
    fn filtfilt_gain(order: usize, cutoff: f64, fs: f64, f: f64) -> f64 {
        let x = (std::f64::consts::PI * f / fs).tan() / (std::f64::consts::PI * cutoff / fs).tan();
        x.powi(2 * order as i32) / (1.0 + x.powi(2 * order as i32))
    }

    /// Amplitude of the `f` Hz component over `samples`, by quadrature
    /// projection (exact for integer period counts).
    fn tone_amplitude(samples: &[f64], f: f64, fs: f64) -> f64 {
        let n = samples.len() as f64;
        let w = 2.0 * std::f64::consts::PI * f / fs;
        let (mut re, mut im) = (0.0, 0.0);
        for (t, &y) in samples.iter().enumerate() {
            re += y * (w * t as f64).cos();
            im += y * (w * t as f64).sin();
        }
        2.0 * (re * re + im * im).sqrt() / n
    }

    #[test]
    fn order2_coefficients_match_closed_form() {
        let s = spec(1.0, 100.0, 2);
        let sections = butterworth_highpass_sections(&s);
        assert_eq!(sections.len(), 1);
        let k = (std::f64::consts::PI / 100.0).tan();
        let norm = 1.0 / (1.0 + std::f64::consts::SQRT_2 * k + k * k);
        let bq = sections[0];
        assert!((bq.b[0] - norm).abs() < 1e-15);
        assert!((bq.b[1] + 2.0 * norm).abs() < 1e-15);
        assert!((bq.b[2] - norm).abs() < 1e-15);
        assert!((bq.a[1] - 2.0 * (k * k - 1.0) * norm).abs() < 1e-15);
        assert!((bq.a[2] - (1.0 - std::f64::consts::SQRT_2 * k + k * k) * norm).abs() < 1e-15);
    }

    #[test]
    fn order1_coefficients_match_closed_form() {
        let s = spec(1.0, 100.0, 1);
        let sections = butterworth_highpass_sections(&s);
        assert_eq!(sections.len(), 1);
        let k = (std::f64::consts::PI / 100.0).tan();
        let bq = sections[0];
        assert!((bq.b[0] - 1.0 / (1.0 + k)).abs() < 1e-15);
        assert!((bq.b[1] + 1.0 / (1.0 + k)).abs() < 1e-15);
        assert!((bq.a[1] - (k - 1.0) / (1.0 + k)).abs() < 1e-15);
    }

    #[test]
    fn constant_offset_is_removed() {
        let x = vec![3.25; 300];
        let (out, applied) = highpass(&sample_from_channel(x), &spec(1.0, 100.0, 2)).unwrap();
        assert!(applied);
        for &v in out.channel(0) {
            assert!(v.abs() < 1e-9, "residual {v}");
        }
        // untouched channel keeps its values
        assert!(out.channel(1).iter().all(|&v| v == 0.5));
    }

    #[test]
    fn passband_tone_amplitude_matches_analytic_gain() {
        let fs = 100.0;
        let f = 10.0;
        let n = 2000;
        let x: Vec<f64> = (0..n)
            .map(|t| (2.0 * std::f64::consts::PI * f * t as f64 / fs).sin() + 2.0)
            .collect();
        let (out, _) = highpass(&sample_from_channel(x), &spec(1.0, fs, 2)).unwrap();
        // steady-state window: 50 periods well clear of both edges
        let amp = tone_amplitude(&out.channel(0)[500..1500], f, fs);
        let expected = filtfilt_gain(2, 1.0, fs, f);
        assert!(
            (amp - expected).abs() < 5e-3,
            "amp {amp}, expected {expected}"
        );
        // the offset is gone at the same time
        let mean: f64 = out.channel(0)[500..1500].iter().sum::<f64>() / 1000.0;
        assert!(mean.abs() < 1e-6);
    }

    #[test]
    fn cutoff_tone_is_attenuated_to_half_power_twice() {
        let fs = 100.0;
        let f = 1.0;
        let n = 3000;
        let x: Vec<f64> = (0..n)
            .map(|t| (2.0 * std::f64::consts::PI * f * t as f64 / fs).sin())
            .collect();
        let (out, _) = highpass(&sample_from_channel(x), &spec(1.0, fs, 2)).unwrap();
        let amp = tone_amplitude(&out.channel(0)[1000..2000], f, fs);
        // |H| = 1/sqrt(2) at the cut-off, so the zero-phase gain is 1/2
        assert!((amp - 0.5).abs() < 0.01, "amp {amp}");
    }

    #[test]
    fn short_recordings_pass_through() {
        let x = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let s = sample_from_channel(x.clone());
        let (out, applied) = highpass(&s, &spec(1.0, 100.0, 2)).unwrap();
        assert!(!applied);
        assert_eq!(out.channel(0), &x[..]);
    }

    #[test]
    fn filter_spec_rejects_bad_parameters() {
        assert!(FilterSpec::new(50.0, 100.0, 2, vec![0]).is_err()); // at nyquist
        assert!(FilterSpec::new(0.0, 100.0, 2, vec![0]).is_err());
        assert!(FilterSpec::new(1.0, 100.0, 0, vec![0]).is_err());
        assert!(FilterSpec::new(1.0, 100.0, 2, vec![13]).is_err());
        assert!(FilterSpec::new(1.0, 100.0, 2, vec![1, 1]).is_err());
        assert!(FilterSpec::new(1.0, 100.0, 2, vec![]).is_err());
    }

    #[test]
    fn moving_average_window_covering_everything_yields_the_mean() {
        let x = vec![1.0, 2.0, 3.0, 4.0, 10.0];
        let mean = 4.0;
        let out = moving_average(&sample_from_channel(x), 11).unwrap();
        for &v in out.channel(0) {
            assert!((v - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn moving_average_truncates_edge_windows() {
        let x = vec![1.0, 2.0, 4.0, 8.0];
        let out = moving_average(&sample_from_channel(x), 3).unwrap();
        let expect = [1.5, 7.0 / 3.0, 14.0 / 3.0, 6.0];
        for (v, e) in out.channel(0).iter().zip(expect) {
            assert!((v - e).abs() < 1e-12);
        }
        // window 1 is the identity
        let id = moving_average(&sample_from_channel(vec![5.0, -1.0]), 1).unwrap();
        assert_eq!(id.channel(0), &[5.0, -1.0]);
        // even windows are rejected
        assert!(moving_average(&sample_from_channel(vec![1.0, 2.0]), 4).is_err());
    }

    fn dataset_with_lens(lens: &[usize]) -> Dataset {
        let samples = lens
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let values = vec![vec![0.0; l]; CHANNEL_COUNT];
                Sample::from_values(format!("s{i}"), 'a', None, values).unwrap()
            })
            .collect();
        Dataset::new(
            samples,
            LabelAlphabet::new(CaseMode::Lower),
            SplitSpec::new(0, Dependency::WriterDependent, Role::Train).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn trim_keeps_inclusive_bounds_and_reports_discards() {
        let ds = dataset_with_lens(&[9, 10, 50, 104, 105]);
        let spec = TrimSpec::new(10, 104).unwrap();
        let (kept, discards) = trim_outliers(&ds, &spec).unwrap();
        let ids: Vec<&str> = kept.samples.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["s1", "s2", "s3"]);
        assert_eq!(discards.len(), 2);
        assert_eq!(discards[0].id, "s0");
        assert!(discards[0].reason.contains("shorter"));
        assert_eq!(discards[1].id, "s4");
        assert!(discards[1].reason.contains("longer"));
    }

    #[test]
    fn derived_upper_bound_rounds_mean_plus_two_sigma() {
        let stats = SubsetStats {
            n_samples: 1000,
            mean_len: 44.05,
            std_len: 29.93,
            min_len: 1,
            max_len: 200,
        };
        let spec = derive_trim_spec(&stats, 2.0, 10).unwrap();
        assert_eq!(spec.min_len, 10);
        assert_eq!(spec.max_len, 104);
        assert!(TrimSpec::new(20, 10).is_err());
    }

    #[test]
    fn trimming_everything_is_an_error() {
        let ds = dataset_with_lens(&[5, 6]);
        let spec = TrimSpec::new(10, 104).unwrap();
        assert!(trim_outliers(&ds, &spec).is_err());
    }
}
