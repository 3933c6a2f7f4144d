//! Core containers: recordings, label alphabets, splits and datasets.
//!
//! A recording is a fixed set of 13 synchronised sensor channels sampled at
//! a common rate; only the number of timesteps varies between recordings.
//! Channels 0-2 are the front accelerometer (x, y, z), 3-5 the rear
//! accelerometer, 6-8 the gyroscope, 9-11 the magnetometer and 12 the tip
//! force.

use crate::{Error, Result};

/// Number of sensor channels in every recording.
pub const CHANNEL_COUNT: usize = 13;

/// Human-readable channel names, indexed by channel id.
pub const CHANNEL_NAMES: [&str; CHANNEL_COUNT] = [
    "acc_front_x",
    "acc_front_y",
    "acc_front_z",
    "acc_rear_x",
    "acc_rear_y",
    "acc_rear_z",
    "gyro_x",
    "gyro_y",
    "gyro_z",
    "mag_x",
    "mag_y",
    "mag_z",
    "force",
];

/// One sensor stream of a recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    /// Position in the fixed channel layout, `0..CHANNEL_COUNT`.
    pub id: usize,
    /// Measurements in recording order.
    pub values: Vec<f64>,
}

impl Channel {
    pub fn new(id: usize, values: Vec<f64>) -> Result<Self> {
        if id >= CHANNEL_COUNT {
            return Err(Error::invalid(format!(
                "channel id {id} out of range 0..{CHANNEL_COUNT}"
            )));
        }
        Ok(Channel { id, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A labelled multivariate recording.
///
/// Invariants (enforced by [`Sample::new`]): exactly [`CHANNEL_COUNT`]
/// channels stored in id order, all of the same non-zero length, all values
/// finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub label: char,
    /// Writer identity if known; drives writer-independent splits.
    pub writer: Option<String>,
    channels: Vec<Channel>,
}

impl Sample {
    pub fn new(
        id: String,
        label: char,
        writer: Option<String>,
        channels: Vec<Channel>,
    ) -> Result<Self> {
        let violations = sample_violations(&id, label, &channels);
        if violations.is_empty() {
            Ok(Sample {
                id,
                label,
                writer,
                channels,
            })
        } else {
            Err(Error::Validation(violations))
        }
    }

    /// Build a sample from plain per-channel value vectors, in channel order.
    pub fn from_values(
        id: impl Into<String>,
        label: char,
        writer: Option<String>,
        values: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let channels = values
            .into_iter()
            .enumerate()
            .map(|(i, v)| Channel { id: i, values: v })
            .collect();
        Sample::new(id.into(), label, writer, channels)
    }

    /// Number of timesteps (shared by all channels).
    pub fn len(&self) -> usize {
        self.channels[0].values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    /// Values of one channel.
    pub fn channel(&self, id: usize) -> &[f64] {
        &self.channels[id].values
    }

    /// Replace all channel values at once, keeping id/label/writer.
    /// Used by preprocessing stages that rewrite the signal.
    pub fn with_values(&self, values: Vec<Vec<f64>>) -> Result<Self> {
        Sample::from_values(self.id.clone(), self.label, self.writer.clone(), values)
    }
}

fn sample_violations(id: &str, label: char, channels: &[Channel]) -> Vec<String> {
    let mut out = Vec::new();
    if id.is_empty() {
        out.push("sample <unnamed>: empty id".to_string());
    }
    if !label.is_alphanumeric() {
        out.push(format!("sample {id}: label {label:?} is not alphanumeric"));
    }
    if channels.len() != CHANNEL_COUNT {
        out.push(format!(
            "sample {id}: expected {CHANNEL_COUNT} channels, got {}",
            channels.len()
        ));
        return out;
    }
    for (pos, ch) in channels.iter().enumerate() {
        if ch.id != pos {
            out.push(format!(
                "sample {id}: channel at position {pos} has id {}",
                ch.id
            ));
        }
    }
    let len0 = channels[0].len();
    if len0 == 0 {
        out.push(format!("sample {id}: zero-length channels"));
    }
    for ch in channels {
        if ch.len() != len0 {
            out.push(format!(
                "sample {id}: channel {} has length {} but channel 0 has {}",
                ch.id,
                ch.len(),
                len0
            ));
        }
        for (t, v) in ch.values.iter().enumerate() {
            if !v.is_finite() {
                out.push(format!(
                    "sample {id}: non-finite value {v} at channel {} timestep {t}",
                    ch.id
                ));
                break;
            }
        }
    }
    out
}

/// Which letter case a dataset covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseMode {
    Lower,
    Upper,
    Combined,
}

impl CaseMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            CaseMode::Lower => "lower",
            CaseMode::Upper => "upper",
            CaseMode::Combined => "combined",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lower" => Ok(CaseMode::Lower),
            "upper" => Ok(CaseMode::Upper),
            "combined" => Ok(CaseMode::Combined),
            other => Err(Error::invalid(format!(
                "unknown case mode {other:?} (expected lower/upper/combined)"
            ))),
        }
    }
}

/// Ordered set of class symbols.
///
/// The ordering is fixed per case mode (a-z, A-Z, or A-Z followed by a-z)
/// and defines the class-index layout used by probability vectors,
/// confusion matrices and prediction files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelAlphabet {
    symbols: Vec<char>,
    case_mode: CaseMode,
}

impl LabelAlphabet {
    pub fn new(case_mode: CaseMode) -> Self {
        let symbols = match case_mode {
            CaseMode::Lower => ('a'..='z').collect(),
            CaseMode::Upper => ('A'..='Z').collect(),
            CaseMode::Combined => ('A'..='Z').chain('a'..='z').collect(),
        };
        LabelAlphabet { symbols, case_mode }
    }

    /// Smallest case mode covering every label in `labels`.
    pub fn infer(labels: impl IntoIterator<Item = char>) -> Result<Self> {
        let mut has_lower = false;
        let mut has_upper = false;
        for l in labels {
            if l.is_ascii_lowercase() {
                has_lower = true;
            } else if l.is_ascii_uppercase() {
                has_upper = true;
            } else {
                return Err(Error::invalid(format!(
                    "label {l:?} is not an ascii letter"
                )));
            }
        }
        match (has_lower, has_upper) {
            (true, false) => Ok(LabelAlphabet::new(CaseMode::Lower)),
            (false, true) => Ok(LabelAlphabet::new(CaseMode::Upper)),
            (true, true) => Ok(LabelAlphabet::new(CaseMode::Combined)),
            (false, false) => Err(Error::invalid("cannot infer alphabet from zero labels")),
        }
    }

    pub fn case_mode(&self) -> CaseMode {
        self.case_mode
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Class index of a symbol.
    pub fn index_of(&self, label: char) -> Option<usize> {
        self.symbols.iter().position(|&s| s == label)
    }

    pub fn symbol(&self, index: usize) -> char {
        self.symbols[index]
    }
}

/// Writer-dependent splits mix writers across roles; writer-independent
/// splits keep every writer on one side only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dependency {
    WriterDependent,
    WriterIndependent,
}

impl Dependency {
    pub fn as_str(&self) -> &'static str {
        match self {
            Dependency::WriterDependent => "wd",
            Dependency::WriterIndependent => "wi",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "wd" => Ok(Dependency::WriterDependent),
            "wi" => Ok(Dependency::WriterIndependent),
            other => Err(Error::invalid(format!(
                "unknown dependency {other:?} (expected wd/wi)"
            ))),
        }
    }
}

/// Train or test side of a split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Train,
    Test,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Test => "test",
        }
    }
}

/// Identifies one side of one cross-validation fold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    /// Fold index, `0..FOLD_COUNT`.
    pub fold: u8,
    pub dependency: Dependency,
    pub role: Role,
}

/// Number of cross-validation folds.
pub const FOLD_COUNT: u8 = 5;

impl SplitSpec {
    pub fn new(fold: u8, dependency: Dependency, role: Role) -> Result<Self> {
        if fold >= FOLD_COUNT {
            return Err(Error::invalid(format!(
                "fold {fold} out of range 0..{FOLD_COUNT}"
            )));
        }
        Ok(SplitSpec {
            fold,
            dependency,
            role,
        })
    }
}

/// A set of recordings forming one side of one split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub alphabet: LabelAlphabet,
    pub split: SplitSpec,
}

impl Dataset {
    /// Build a dataset, rejecting it if [`validate_dataset`] finds problems.
    pub fn new(samples: Vec<Sample>, alphabet: LabelAlphabet, split: SplitSpec) -> Result<Self> {
        let ds = Dataset {
            samples,
            alphabet,
            split,
        };
        let violations = validate_dataset(&ds);
        if violations.is_empty() {
            Ok(ds)
        } else {
            Err(Error::Validation(violations))
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<char> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Class index of every sample, in order.
    pub fn class_indices(&self) -> Vec<usize> {
        self.samples
            .iter()
            .map(|s| self.alphabet.index_of(s.label).expect("validated label"))
            .collect()
    }
}

/// Check every dataset rule; returns one message per violation, each naming
/// the offending sample (or the dataset itself) and the rule broken.
pub fn validate_dataset(ds: &Dataset) -> Vec<String> {
    let mut out = Vec::new();
    if ds.samples.is_empty() {
        out.push("dataset: contains no samples".to_string());
    }
    let mut seen = std::collections::HashSet::new();
    for s in &ds.samples {
        out.extend(sample_violations(&s.id, s.label, &s.channels));
        if ds.alphabet.index_of(s.label).is_none() {
            out.push(format!(
                "sample {}: label {:?} outside the {} alphabet",
                s.id,
                s.label,
                ds.alphabet.case_mode().as_str()
            ));
        }
        if !seen.insert(s.id.clone()) {
            out.push(format!("sample {}: duplicate sample id", s.id));
        }
    }
    out
}

/// Cross-role checks for one fold: consistent split identity and, for
/// writer-independent splits, disjoint writer sets.
pub fn validate_split_pair(train: &Dataset, test: &Dataset) -> Vec<String> {
    let mut out = Vec::new();
    if train.split.role != Role::Train {
        out.push("split pair: first dataset is not the train role".to_string());
    }
    if test.split.role != Role::Test {
        out.push("split pair: second dataset is not the test role".to_string());
    }
    if train.split.fold != test.split.fold {
        out.push(format!(
            "split pair: fold mismatch ({} vs {})",
            train.split.fold, test.split.fold
        ));
    }
    if train.split.dependency != test.split.dependency {
        out.push("split pair: dependency mismatch".to_string());
    }
    if train.split.dependency == Dependency::WriterIndependent {
        let train_writers: std::collections::HashSet<_> = train
            .samples
            .iter()
            .filter_map(|s| s.writer.as_deref())
            .collect();
        let mut flagged = std::collections::HashSet::new();
        for s in &test.samples {
            if let Some(w) = s.writer.as_deref() {
                if train_writers.contains(w) && flagged.insert(w.to_string()) {
                    out.push(format!(
                        "split pair: writer {w} appears in both roles of a writer-independent split"
                    ));
                }
            }
        }
    }
    out
}

/// Length statistics of a recording collection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsetStats {
    pub n_samples: usize,
    /// Mean recording length in timesteps.
    pub mean_len: f64,
    /// Population standard deviation of recording length.
    pub std_len: f64,
    pub min_len: usize,
    pub max_len: usize,
}

/// Length statistics over a set of samples. Errors on an empty set.
pub fn compute_subset_stats(samples: &[Sample]) -> Result<SubsetStats> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot compute stats of an empty sample set"));
    }
    let lens: Vec<usize> = samples.iter().map(|s| s.len()).collect();
    let n = lens.len() as f64;
    let mean = lens.iter().map(|&l| l as f64).sum::<f64>() / n;
    let var = lens
        .iter()
        .map(|&l| {
            let d = l as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    Ok(SubsetStats {
        n_samples: lens.len(),
        mean_len: mean,
        std_len: var.sqrt(),
        min_len: *lens.iter().min().unwrap(),
        max_len: *lens.iter().max().unwrap(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample_with_len(id: &str, label: char, len: usize) -> Sample {
        let values = (0..CHANNEL_COUNT)
            .map(|c| (0..len).map(|t| (c * 100 + t) as f64).collect())
            .collect();
        Sample::from_values(id, label, None, values).unwrap()
    }

    #[test]
    fn alphabet_orderings() {
        let lower = LabelAlphabet::new(CaseMode::Lower);
        assert_eq!(lower.len(), 26);
        assert_eq!(lower.index_of('a'), Some(0));
        assert_eq!(lower.index_of('z'), Some(25));
        assert_eq!(lower.index_of('A'), None);

        let upper = LabelAlphabet::new(CaseMode::Upper);
        assert_eq!(upper.len(), 26);
        assert_eq!(upper.index_of('Z'), Some(25));

        let combined = LabelAlphabet::new(CaseMode::Combined);
        assert_eq!(combined.len(), 52);
        assert_eq!(combined.index_of('A'), Some(0));
        assert_eq!(combined.index_of('Z'), Some(25));
        assert_eq!(combined.index_of('a'), Some(26));
        assert_eq!(combined.index_of('z'), Some(51));
    }

    #[test]
    fn alphabet_inference_picks_smallest_cover() {
        let a = LabelAlphabet::infer(['a', 'b', 'z']).unwrap();
        assert_eq!(a.case_mode(), CaseMode::Lower);
        let a = LabelAlphabet::infer(['A', 'Q']).unwrap();
        assert_eq!(a.case_mode(), CaseMode::Upper);
        let a = LabelAlphabet::infer(['A', 'q']).unwrap();
        assert_eq!(a.case_mode(), CaseMode::Combined);
        assert!(LabelAlphabet::infer([]).is_err());
        assert!(LabelAlphabet::infer(['3']).is_err());
    }

    #[test]
    fn sample_rejects_bad_shapes() {
        // wrong channel count
        let r = Sample::from_values("s1", 'a', None, vec![vec![1.0]; 5]);
        assert!(matches!(r, Err(Error::Validation(_))));

        // ragged lengths
        let mut values = vec![vec![1.0, 2.0]; CHANNEL_COUNT];
        values[7] = vec![1.0];
        let r = Sample::from_values("s1", 'a', None, values);
        let Err(Error::Validation(v)) = r else {
            panic!("expected validation error")
        };
        assert!(v.iter().any(|m| m.contains("s1") && m.contains("length")));

        // zero length
        let r = Sample::from_values("s1", 'a', None, vec![vec![]; CHANNEL_COUNT]);
        assert!(matches!(r, Err(Error::Validation(_))));

        // non-finite value
        let mut values = vec![vec![0.0, 1.0]; CHANNEL_COUNT];
        values[3][1] = f64::NAN;
        let r = Sample::from_values("s1", 'a', None, values);
        let Err(Error::Validation(v)) = r else {
            panic!("expected validation error")
        };
        assert!(v.iter().any(|m| m.contains("non-finite")));
    }

    #[test]
    fn sample_accessors() {
        let s = sample_with_len("s9", 'q', 4);
        assert_eq!(s.len(), 4);
        assert_eq!(s.channels().len(), CHANNEL_COUNT);
        assert_eq!(s.channel(2)[3], 203.0);
    }

    #[test]
    fn dataset_validation_names_sample_and_rule() {
        let split = SplitSpec::new(0, Dependency::WriterDependent, Role::Train).unwrap();
        let samples = vec![
            sample_with_len("s1", 'a', 3),
            sample_with_len("s1", 'b', 3), // duplicate id
            sample_with_len("s2", 'Z', 3), // outside lower alphabet
        ];
        let ds = Dataset {
            samples,
            alphabet: LabelAlphabet::new(CaseMode::Lower),
            split,
        };
        let v = validate_dataset(&ds);
        assert_eq!(v.len(), 2);
        assert!(v.iter().any(|m| m.contains("s1") && m.contains("duplicate")));
        assert!(v.iter().any(|m| m.contains("s2") && m.contains("alphabet")));
    }

    #[test]
    fn writer_overlap_flagged_only_for_independent_splits() {
        let mk = |role, dep, writer: &str| {
            let mut s = sample_with_len("s", 'a', 3);
            s.writer = Some(writer.to_string());
            let mut s2 = sample_with_len("t", 'b', 3);
            s2.writer = Some("other".to_string());
            Dataset {
                samples: vec![s, s2],
                alphabet: LabelAlphabet::new(CaseMode::Lower),
                split: SplitSpec::new(1, dep, role).unwrap(),
            }
        };

        let train = mk(Role::Train, Dependency::WriterIndependent, "w7");
        let test = mk(Role::Test, Dependency::WriterIndependent, "w7");
        let v = validate_split_pair(&train, &test);
        assert!(v.iter().any(|m| m.contains("w7")));

        let train = mk(Role::Train, Dependency::WriterDependent, "w7");
        let test = mk(Role::Test, Dependency::WriterDependent, "w7");
        assert!(validate_split_pair(&train, &test).is_empty());
    }

    #[test]
    fn subset_stats_match_hand_computation() {
        // lengths 10 and 20: mean 15, population std 5
        let samples = vec![sample_with_len("a", 'a', 10), sample_with_len("b", 'b', 20)];
        let st = compute_subset_stats(&samples).unwrap();
        assert_eq!(st.n_samples, 2);
        assert_eq!(st.mean_len, 15.0);
        assert_eq!(st.std_len, 5.0);
        assert_eq!(st.min_len, 10);
        assert_eq!(st.max_len, 20);
        assert!(compute_subset_stats(&[]).is_err());
    }

    #[test]
    fn split_spec_bounds() {
        assert!(SplitSpec::new(4, Dependency::WriterDependent, Role::Test).is_ok());
        assert!(SplitSpec::new(5, Dependency::WriterDependent, Role::Test).is_err());
    }
}
