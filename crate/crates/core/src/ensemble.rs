//! Combines per-model class probabilities into a single prediction with one
//! of four voting schemes: plurality, tier-weighted, soft (probability
//! averaging), and weighted-soft. All schemes are deterministic, resolve ties
//! toward the alphabet-minimal class, and ignore the order in which models
//! appear (given fixed per-model weights).

use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::classifiers::ClassProbabilities;
use crate::io::{fmt_g17, parse_f64};
use crate::{Error, Result};

/// Canonical voting weight of a bottom-tier model.
pub const TIER_WEIGHT_BOTTOM: f64 = 1.0;
/// Canonical voting weight of a middle-tier model. A single middle-tier vote
/// outweighs all eight bottom-tier models voting together (8 x 1 < 9).
pub const TIER_WEIGHT_MIDDLE: f64 = 9.0;
/// Canonical voting weight of a top-tier model. A single top-tier vote
/// outweighs four middle plus eight bottom models (4 x 9 + 8 x 1 = 44 < 45).
pub const TIER_WEIGHT_TOP: f64 = 45.0;

/// Model quality tier carrying its canonical voting weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tier {
    Bottom,
    Middle,
    Top,
}

impl Tier {
    pub fn weight(self) -> f64 {
        match self {
            Tier::Bottom => TIER_WEIGHT_BOTTOM,
            Tier::Middle => TIER_WEIGHT_MIDDLE,
            Tier::Top => TIER_WEIGHT_TOP,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Bottom => "bottom",
            Tier::Middle => "middle",
            Tier::Top => "top",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bottom" => Ok(Tier::Bottom),
            "middle" => Ok(Tier::Middle),
            "top" => Ok(Tier::Top),
            other => Err(Error::invalid(format!("unknown tier '{other}'"))),
        }
    }
}

// ---------------------------------------------------------------------------
// Prediction matrix
// ---------------------------------------------------------------------------

/// Class-probability tensor over models x samples. The class axis is named
/// by `symbols`, ordered as in the label alphabet that produced the
/// predictions; tie-breaking toward lower indices is therefore lexicographic.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    model_ids: Vec<String>,
    sample_ids: Vec<String>,
    symbols: Vec<char>,
    /// `tensor[model][sample]`.
    tensor: Vec<Vec<ClassProbabilities>>,
}

impl PredictionMatrix {
    pub fn new(
        model_ids: Vec<String>,
        sample_ids: Vec<String>,
        symbols: Vec<char>,
        tensor: Vec<Vec<ClassProbabilities>>,
    ) -> Result<Self> {
        let mut problems = Vec::new();
        if symbols.is_empty() {
            problems.push("prediction matrix needs at least one class".to_string());
        }
        let mut seen_sym = std::collections::HashSet::new();
        for &c in &symbols {
            if !seen_sym.insert(c) {
                problems.push(format!("duplicate class symbol '{c}'"));
            }
        }
        if model_ids.is_empty() {
            problems.push("prediction matrix needs at least one model".to_string());
        }
        if sample_ids.is_empty() {
            problems.push("prediction matrix needs at least one sample".to_string());
        }
        let mut seen = std::collections::HashSet::new();
        for id in &model_ids {
            if id.is_empty() {
                problems.push("model ids must not be empty".to_string());
            }
            if !seen.insert(id) {
                problems.push(format!("duplicate model id '{id}'"));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for id in &sample_ids {
            if !seen.insert(id) {
                problems.push(format!("duplicate sample id '{id}'"));
            }
        }
        if tensor.len() != model_ids.len() {
            problems.push(format!(
                "tensor has {} model rows, expected {}",
                tensor.len(),
                model_ids.len()
            ));
        }
        for (m, rows) in tensor.iter().enumerate() {
            if rows.len() != sample_ids.len() {
                problems.push(format!(
                    "model '{}' has {} sample rows, expected {}",
                    model_ids.get(m).map_or("?", |s| s.as_str()),
                    rows.len(),
                    sample_ids.len()
                ));
                continue;
            }
            for (s, probs) in rows.iter().enumerate() {
                if probs.len() != symbols.len() {
                    problems.push(format!(
                        "model '{}' sample '{}' has {} class probabilities, expected {}",
                        model_ids.get(m).map_or("?", |s| s.as_str()),
                        sample_ids[s],
                        probs.len(),
                        symbols.len()
                    ));
                }
            }
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        Ok(PredictionMatrix { model_ids, sample_ids, symbols, tensor })
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    /// Class symbols naming the probability columns, in alphabet order.
    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn n_models(&self) -> usize {
        self.model_ids.len()
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    /// Probability row of one (model, sample) cell.
    pub fn row(&self, model: usize, sample: usize) -> &ClassProbabilities {
        &self.tensor[model][sample]
    }

    pub fn model_index(&self, model_id: &str) -> Result<usize> {
        self.model_ids
            .iter()
            .position(|m| m == model_id)
            .ok_or_else(|| Error::invalid(format!("unknown model id '{model_id}'")))
    }

    /// Argmax class per sample for one model (ties toward the lowest index).
    pub fn argmax_labels(&self, model: usize) -> Vec<usize> {
        self.tensor[model].iter().map(|p| p.argmax()).collect()
    }

    /// Restricts to a subset of model ids, preserving this matrix's order.
    pub fn subset(&self, ids: &[String]) -> Result<PredictionMatrix> {
        if ids.is_empty() {
            return Err(Error::invalid("model subset must not be empty"));
        }
        let mut indices = Vec::with_capacity(ids.len());
        for id in ids {
            indices.push(self.model_index(id)?);
        }
        indices.sort_unstable();
        indices.dedup();
        Ok(PredictionMatrix {
            model_ids: indices.iter().map(|&i| self.model_ids[i].clone()).collect(),
            sample_ids: self.sample_ids.clone(),
            symbols: self.symbols.clone(),
            tensor: indices.iter().map(|&i| self.tensor[i].clone()).collect(),
        })
    }
}

// ---------------------------------------------------------------------------
// Tier weights
// ---------------------------------------------------------------------------

/// Strictly positive per-model voting weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TierWeights(BTreeMap<String, f64>);

impl TierWeights {
    pub fn new(pairs: impl IntoIterator<Item = (String, f64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (id, w) in pairs {
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::invalid(format!(
                    "weight for model '{id}' must be a positive real, got {w}"
                )));
            }
            if map.insert(id.clone(), w).is_some() {
                return Err(Error::invalid(format!("duplicate weight for model '{id}'")));
            }
        }
        Ok(TierWeights(map))
    }

    /// Uniform weight 1 for every given model.
    pub fn uniform(model_ids: &[String]) -> Self {
        TierWeights(model_ids.iter().map(|id| (id.clone(), 1.0)).collect())
    }

    /// Canonical tier weights from a tier assignment.
    pub fn from_tiers(tiers: impl IntoIterator<Item = (String, Tier)>) -> Result<Self> {
        Self::new(tiers.into_iter().map(|(id, t)| (id, t.weight())))
    }

    pub fn get(&self, model_id: &str) -> Option<f64> {
        self.0.get(model_id).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, f64)> {
        self.0.iter().map(|(k, &v)| (k, v))
    }

    /// Weight of every model in the matrix, in matrix order; errors on the
    /// first model without a weight.
    fn for_matrix(&self, pm: &PredictionMatrix) -> Result<Vec<f64>> {
        pm.model_ids()
            .iter()
            .map(|id| {
                self.get(id)
                    .ok_or_else(|| Error::invalid(format!("no weight for model '{id}'")))
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file =
            std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = BufWriter::new(file);
        let mut inner = || -> std::io::Result<()> {
            writeln!(w, "model_id,weight")?;
            for (id, weight) in self.iter() {
                writeln!(w, "{id},{}", fmt_g17(weight))?;
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
        match lines.next() {
            Some((_, header)) if header.trim() == "model_id,weight" => {}
            _ => {
                return Err(Error::Parse {
                    path: p,
                    line: 1,
                    message: "expected header 'model_id,weight'".into(),
                })
            }
        }
        let mut pairs = Vec::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let (id, raw) = line.rsplit_once(',').ok_or_else(|| Error::Parse {
                path: p.clone(),
                line: idx + 1,
                message: "expected 'model_id,weight'".into(),
            })?;
            let weight = parse_f64(raw.trim(), &p, idx + 1)?;
            pairs.push((id.to_string(), weight));
        }
        TierWeights::new(pairs)
    }
}

// ---------------------------------------------------------------------------
// Voting
// ---------------------------------------------------------------------------

/// Voting scheme selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Plurality,
    Weighted,
    Soft,
    WeightedSoft,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Plurality => "plurality",
            Scheme::Weighted => "weighted",
            Scheme::Soft => "soft",
            Scheme::WeightedSoft => "weighted-soft",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "plurality" => Ok(Scheme::Plurality),
            "weighted" => Ok(Scheme::Weighted),
            "soft" => Ok(Scheme::Soft),
            "weighted-soft" => Ok(Scheme::WeightedSoft),
            other => Err(Error::invalid(format!("unknown voting scheme '{other}'"))),
        }
    }
}

/// Result of a vote: the winning class index per sample plus the normalized
/// score distribution the decision was taken from.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteOutcome {
    pub labels: Vec<usize>,
    pub distributions: Vec<ClassProbabilities>,
}

/// Index of the maximal score; ties resolve to the lowest (alphabet-minimal)
/// class index.
fn argmax_lex(scores: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Shared scoring loop: per sample, every model contributes `weight` times
/// either its argmax indicator (hard) or its probability row (soft); scores
/// are normalized by the total weight into a distribution.
fn run_vote(pm: &PredictionMatrix, weights: &[f64], soft: bool) -> VoteOutcome {
    let n_classes = pm.symbols().len();
    let total: f64 = weights.iter().sum();
    let results: Vec<(usize, ClassProbabilities)> = (0..pm.n_samples())
        .into_par_iter()
        .map(|s| {
            let mut scores = vec![0.0; n_classes];
            for (m, &w) in weights.iter().enumerate() {
                let row = pm.row(m, s);
                if soft {
                    for (score, &p) in scores.iter_mut().zip(row.probs()) {
                        *score += w * p;
                    }
                } else {
                    scores[row.argmax()] += w;
                }
            }
            let label = argmax_lex(&scores);
            for score in &mut scores {
                *score /= total;
            }
            let dist = ClassProbabilities::new(scores)
                .expect("normalized vote scores form a distribution");
            (label, dist)
        })
        .collect();
    let (labels, distributions) = results.into_iter().unzip();
    VoteOutcome { labels, distributions }
}

/// Each model casts one vote for its argmax class; most votes wins.
pub fn plurality_vote(pm: &PredictionMatrix, subset: &[String]) -> Result<VoteOutcome> {
    let restricted = pm.subset(subset)?;
    Ok(run_vote(&restricted, &vec![1.0; restricted.n_models()], false))
}

/// Argmax votes weighted by each model's tier weight.
pub fn weighted_vote(pm: &PredictionMatrix, weights: &TierWeights) -> Result<VoteOutcome> {
    let w = weights.for_matrix(pm)?;
    Ok(run_vote(pm, &w, false))
}

/// Class probabilities averaged over the subset; highest mean wins.
pub fn soft_vote(pm: &PredictionMatrix, subset: &[String]) -> Result<VoteOutcome> {
    let restricted = pm.subset(subset)?;
    Ok(run_vote(&restricted, &vec![1.0; restricted.n_models()], true))
}

/// Weighted average of class probabilities: `score_c = sum_m w_m * p_m(c)`,
/// reported normalized by the total weight.
pub fn weighted_soft_vote(pm: &PredictionMatrix, weights: &TierWeights) -> Result<VoteOutcome> {
    let w = weights.for_matrix(pm)?;
    Ok(run_vote(pm, &w, true))
}

// ---------------------------------------------------------------------------
// Prediction matrix I/O
// ---------------------------------------------------------------------------

/// Writes the tensor as CSV with columns `model_id, sample_id,` then one
/// column per class symbol.
pub fn save_prediction_matrix(pm: &PredictionMatrix, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let mut inner = || -> std::io::Result<()> {
        let symbols: Vec<String> = pm.symbols().iter().map(|c| c.to_string()).collect();
        writeln!(w, "model_id,sample_id,{}", symbols.join(","))?;
        for (m, model_id) in pm.model_ids().iter().enumerate() {
            for (s, sample_id) in pm.sample_ids().iter().enumerate() {
                let probs: Vec<String> =
                    pm.row(m, s).probs().iter().map(|&p| fmt_g17(p)).collect();
                writeln!(w, "{model_id},{sample_id},{}", probs.join(","))?;
            }
        }
        w.flush()
    };
    inner().map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads a prediction tensor. Rows whose probabilities sum to 1 within 1e-6
/// are renormalized (each occurrence reported as a warning); sums outside the
/// tolerance, negative entries, and ragged blocks are errors.
pub fn load_prediction_matrix(path: &Path) -> Result<(PredictionMatrix, Vec<String>)> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let p = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        path: p.clone(),
        line: 1,
        message: "empty prediction matrix file".into(),
    })?;
    let mut cols = header.split(',');
    if cols.next() != Some("model_id") || cols.next() != Some("sample_id") {
        return Err(Error::Parse {
            path: p,
            line: 1,
            message: "expected header 'model_id,sample_id,<class symbols>'".into(),
        });
    }
    let mut symbols = Vec::new();
    for c in cols {
        let mut chars = c.chars();
        match (chars.next(), chars.next()) {
            (Some(ch), None) => symbols.push(ch),
            _ => {
                return Err(Error::Parse {
                    path: p,
                    line: 1,
                    message: format!("class column '{c}' is not a single symbol"),
                })
            }
        }
    }
    if symbols.is_empty() {
        return Err(Error::Parse {
            path: p,
            line: 1,
            message: "prediction matrix header declares no classes".into(),
        });
    }
    let mut warnings = Vec::new();
    let mut model_order: Vec<String> = Vec::new();
    let mut per_model: BTreeMap<String, (Vec<String>, Vec<ClassProbabilities>)> = BTreeMap::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 2 + symbols.len() {
            return Err(Error::Parse {
                path: p.clone(),
                line: line_no,
                message: format!(
                    "expected {} columns, found {}",
                    2 + symbols.len(),
                    parts.len()
                ),
            });
        }
        let model_id = parts[0].to_string();
        let sample_id = parts[1].to_string();
        let mut probs = Vec::with_capacity(symbols.len());
        for raw in &parts[2..] {
            probs.push(parse_f64(raw.trim(), &p, line_no)?);
        }
        if probs.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::invalid(format!(
                "{p}:{line_no}: probabilities must be finite and non-negative"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "{p}:{line_no}: probability row sums to {sum}, outside the 1e-6 tolerance"
            )));
        }
        // Rows that already satisfy the probability invariant are kept
        // bit-for-bit; only rows outside it are renormalized (with a warning).
        if (sum - 1.0).abs() > 1e-9 {
            let renormalized: Vec<f64> = probs.iter().map(|&v| v / sum).collect();
            if (renormalized.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "{p}:{line_no}: row could not be renormalized"
                )));
            }
            warnings.push(format!(
                "{p}:{line_no}: row for model '{model_id}' sample '{sample_id}' summed to {sum}; renormalized"
            ));
            probs = renormalized;
        }
        let row = ClassProbabilities::new(probs)?;
        if !per_model.contains_key(&model_id) {
            model_order.push(model_id.clone());
        }
        let entry = per_model.entry(model_id).or_default();
        entry.0.push(sample_id);
        entry.1.push(row);
    }
    if model_order.is_empty() {
        return Err(Error::invalid(format!("{p} contains no prediction rows")));
    }
    let reference_samples = per_model[&model_order[0]].0.clone();
    let mut tensor = Vec::with_capacity(model_order.len());
    for id in &model_order {
        let (samples, rows) = per_model.remove(id).expect("model collected above");
        if samples != reference_samples {
            return Err(Error::invalid(format!(
                "model '{id}' in {p} lists different samples than model '{}'",
                model_order[0]
            )));
        }
        tensor.push(rows);
    }
    let pm = PredictionMatrix::new(model_order, reference_samples, symbols, tensor)?;
    Ok((pm, warnings))
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn lower(n: usize) -> Vec<char> {
        ('a'..='z').take(n).collect()
    }

    /// Probability row with all mass on one class.
    fn onehot(n: usize, class: usize) -> ClassProbabilities {
        let mut p = vec![0.0; n];
        p[class] = 1.0;
        ClassProbabilities::new(p).unwrap()
    }

    fn matrix_from_argmax(votes: &[&[usize]], n_classes: usize) -> PredictionMatrix {
        let model_ids: Vec<String> = (0..votes.len()).map(|m| format!("m{m}")).collect();
        let sample_ids: Vec<String> = (0..votes[0].len()).map(|s| format!("s{s}")).collect();
        let tensor: Vec<Vec<ClassProbabilities>> = votes
            .iter()
            .map(|row| row.iter().map(|&c| onehot(n_classes, c)).collect())
            .collect();
        PredictionMatrix::new(model_ids, sample_ids, lower(n_classes), tensor).unwrap()
    }

    fn all_ids(pm: &PredictionMatrix) -> Vec<String> {
        pm.model_ids().to_vec()
    }

    #[test]
    fn plurality_examples_and_tie_rule() {
        // Votes {a, a, b, c} -> a.
        let pm = matrix_from_argmax(&[&[0], &[0], &[1], &[2]], 3);
        let out = plurality_vote(&pm, &all_ids(&pm)).unwrap();
        assert_eq!(out.labels, vec![0]);
        assert_eq!(out.distributions[0].probs(), &[0.5, 0.25, 0.25]);

        // Votes {a, a, b, b} -> a by the lexicographic tie rule.
        let pm = matrix_from_argmax(&[&[0], &[0], &[1], &[1]], 2);
        let out = plurality_vote(&pm, &all_ids(&pm)).unwrap();
        assert_eq!(out.labels, vec![0]);

        // The same votes for classes b and c -> b (still alphabet-minimal).
        let pm = matrix_from_argmax(&[&[1], &[1], &[2], &[2]], 3);
        assert_eq!(plurality_vote(&pm, &all_ids(&pm)).unwrap().labels, vec![1]);

        // A single model is the identity.
        let pm = matrix_from_argmax(&[&[2, 0, 1]], 3);
        let out = plurality_vote(&pm, &all_ids(&pm)).unwrap();
        assert_eq!(out.labels, vec![2, 0, 1]);
    }

    #[test]
    fn plurality_rejects_unknown_and_empty_subsets() {
        let pm = matrix_from_argmax(&[&[0], &[1]], 2);
        assert!(plurality_vote(&pm, &[]).is_err());
        let err = plurality_vote(&pm, &["ghost".to_string()]).unwrap_err();
        assert!(err.to_string().contains("ghost"));
    }

    #[test]
    fn weighted_vote_tier_dominance() {
        // Eight bottom-tier models vote 'a'; one middle-tier votes 'b'.
        let mut votes: Vec<&[usize]> = vec![&[0]; 8];
        votes.push(&[1]);
        let pm = matrix_from_argmax(&votes, 2);
        let mut weights: Vec<(String, f64)> = (0..8)
            .map(|m| (format!("m{m}"), TIER_WEIGHT_BOTTOM))
            .collect();
        weights.push(("m8".to_string(), TIER_WEIGHT_MIDDLE));
        let tw = TierWeights::new(weights).unwrap();
        let out = weighted_vote(&pm, &tw).unwrap();
        assert_eq!(out.labels, vec![1], "8 x 1 < 9: the middle tier wins");

        // Four middle (36) plus eight bottom (8) vote 'a'; one top (45) votes 'b'.
        let mut votes: Vec<&[usize]> = vec![&[0]; 12];
        votes.push(&[1]);
        let pm = matrix_from_argmax(&votes, 2);
        let mut weights: Vec<(String, f64)> = (0..4)
            .map(|m| (format!("m{m}"), TIER_WEIGHT_MIDDLE))
            .collect();
        weights.extend((4..12).map(|m| (format!("m{m}"), TIER_WEIGHT_BOTTOM)));
        weights.push(("m12".to_string(), TIER_WEIGHT_TOP));
        let tw = TierWeights::new(weights).unwrap();
        let out = weighted_vote(&pm, &tw).unwrap();
        assert_eq!(out.labels, vec![1], "4 x 9 + 8 x 1 = 44 < 45: the top tier wins");
    }

    #[test]
    fn weighted_vote_with_equal_weights_equals_plurality() {
        let mut rng = ChaCha8Rng::seed_from_u64(131);
        for _ in 0..20 {
            let n_models = rng.random_range(1..=6);
            let n_samples = rng.random_range(1..=8);
            let n_classes = rng.random_range(2..=5);
            let votes: Vec<Vec<usize>> = (0..n_models)
                .map(|_| (0..n_samples).map(|_| rng.random_range(0..n_classes)).collect())
                .collect();
            let refs: Vec<&[usize]> = votes.iter().map(|v| v.as_slice()).collect();
            let pm = matrix_from_argmax(&refs, n_classes);
            let tw = TierWeights::uniform(pm.model_ids());
            let weighted = weighted_vote(&pm, &tw).unwrap();
            let plurality = plurality_vote(&pm, &all_ids(&pm)).unwrap();
            assert_eq!(weighted.labels, plurality.labels);
        }
    }

    #[test]
    fn weighted_vote_requires_every_weight() {
        let pm = matrix_from_argmax(&[&[0], &[1]], 2);
        let tw = TierWeights::new([("m0".to_string(), 1.0)]).unwrap();
        let err = weighted_vote(&pm, &tw).unwrap_err();
        assert!(err.to_string().contains("m1"));
    }

    #[test]
    fn soft_vote_averages_probabilities() {
        // A = [0.6, 0.4], B = [0.2, 0.8] -> mean [0.4, 0.6] -> class 1.
        let tensor = vec![
            vec![ClassProbabilities::new(vec![0.6, 0.4]).unwrap()],
            vec![ClassProbabilities::new(vec![0.2, 0.8]).unwrap()],
        ];
        let pm = PredictionMatrix::new(
            vec!["A".into(), "B".into()],
            vec!["s0".into()],
            lower(2),
            tensor,
        )
        .unwrap();
        let out = soft_vote(&pm, &all_ids(&pm)).unwrap();
        assert_eq!(out.labels, vec![1]);
        let dist = out.distributions[0].probs();
        assert!((dist[0] - 0.4).abs() < 1e-15);
        assert!((dist[1] - 0.6).abs() < 1e-15);
        // Identical models return their shared distribution.
        let tensor = vec![
            vec![ClassProbabilities::new(vec![0.3, 0.7]).unwrap()],
            vec![ClassProbabilities::new(vec![0.3, 0.7]).unwrap()],
        ];
        let pm = PredictionMatrix::new(
            vec!["A".into(), "B".into()],
            vec!["s0".into()],
            lower(2),
            tensor,
        )
        .unwrap();
        let out = soft_vote(&pm, &all_ids(&pm)).unwrap();
        assert_eq!(out.distributions[0].probs(), &[0.3, 0.7]);
    }

    #[test]
    fn weighted_soft_vote_applies_weights_to_probabilities() {
        // Weights {1, 9}: A = [0.9, 0.1] (w=1), B = [0.3, 0.7] (w=9).
        // Scores: [0.9 + 2.7, 0.1 + 6.3] = [3.6, 6.4] -> class 1; the
        // reported distribution is normalized by the total weight 10.
        let tensor = vec![
            vec![ClassProbabilities::new(vec![0.9, 0.1]).unwrap()],
            vec![ClassProbabilities::new(vec![0.3, 0.7]).unwrap()],
        ];
        let pm = PredictionMatrix::new(
            vec!["A".into(), "B".into()],
            vec!["s0".into()],
            lower(2),
            tensor,
        )
        .unwrap();
        let tw = TierWeights::new([("A".to_string(), 1.0), ("B".to_string(), 9.0)]).unwrap();
        let out = weighted_soft_vote(&pm, &tw).unwrap();
        assert_eq!(out.labels, vec![1]);
        let dist = out.distributions[0].probs();
        assert!((dist[0] - 0.36).abs() < 1e-15);
        assert!((dist[1] - 0.64).abs() < 1e-15);
    }

    fn random_matrix(rng: &mut ChaCha8Rng, n_models: usize, n_samples: usize, n_classes: usize)
        -> PredictionMatrix
    {
        let tensor: Vec<Vec<ClassProbabilities>> = (0..n_models)
            .map(|_| {
                (0..n_samples)
                    .map(|_| {
                        let raw: Vec<f64> =
                            (0..n_classes).map(|_| rng.random::<f64>() + 1e-9).collect();
                        let sum: f64 = raw.iter().sum();
                        ClassProbabilities::new(raw.iter().map(|&v| v / sum).collect()).unwrap()
                    })
                    .collect()
            })
            .collect();
        PredictionMatrix::new(
            (0..n_models).map(|m| format!("m{m}")).collect(),
            (0..n_samples).map(|s| format!("s{s}")).collect(),
            lower(n_classes),
            tensor,
        )
        .unwrap()
    }

    #[test]
    fn soft_equals_weighted_soft_under_equal_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(137);
        for _ in 0..50 {
            let n_models = rng.random_range(1..=5);
            let n_samples = rng.random_range(1..=6);
            let n_classes = rng.random_range(2..=4);
            let pm = random_matrix(&mut rng, n_models, n_samples, n_classes);
            let tw = TierWeights::uniform(pm.model_ids());
            let soft = soft_vote(&pm, &all_ids(&pm)).unwrap();
            let wsoft = weighted_soft_vote(&pm, &tw).unwrap();
            assert_eq!(soft.labels, wsoft.labels);
            for (a, b) in soft.distributions.iter().zip(&wsoft.distributions) {
                for (&x, &y) in a.probs().iter().zip(b.probs()) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn positive_weight_scaling_leaves_argmax_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(139);
        let pm = random_matrix(&mut rng, 4, 10, 3);
        let base: Vec<(String, f64)> = pm
            .model_ids()
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), (i + 1) as f64))
            .collect();
        let scaled: Vec<(String, f64)> =
            base.iter().map(|(id, w)| (id.clone(), w * 10.0)).collect();
        let tw1 = TierWeights::new(base).unwrap();
        let tw2 = TierWeights::new(scaled).unwrap();
        assert_eq!(
            weighted_vote(&pm, &tw1).unwrap().labels,
            weighted_vote(&pm, &tw2).unwrap().labels
        );
        assert_eq!(
            weighted_soft_vote(&pm, &tw1).unwrap().labels,
            weighted_soft_vote(&pm, &tw2).unwrap().labels
        );
    }

    #[test]
    fn votes_are_invariant_to_model_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(141);
        let pm = random_matrix(&mut rng, 5, 8, 4);
        // Rebuild with models in reverse order.
        let reversed_ids: Vec<String> = pm.model_ids().iter().rev().cloned().collect();
        let tensor: Vec<Vec<ClassProbabilities>> = (0..pm.n_models())
            .rev()
            .map(|m| (0..pm.n_samples()).map(|s| pm.row(m, s).clone()).collect())
            .collect();
        let reversed = PredictionMatrix::new(
            reversed_ids,
            pm.sample_ids().to_vec(),
            pm.symbols().to_vec(),
            tensor,
        )
        .unwrap();
        let weights: Vec<(String, f64)> = pm
            .model_ids()
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), [1.0, 9.0, 45.0, 2.0, 7.0][i]))
            .collect();
        let tw = TierWeights::new(weights).unwrap();
        for (a, b) in [
            (plurality_vote(&pm, &all_ids(&pm)).unwrap(),
             plurality_vote(&reversed, &all_ids(&reversed)).unwrap()),
            (weighted_vote(&pm, &tw).unwrap(), weighted_vote(&reversed, &tw).unwrap()),
            (soft_vote(&pm, &all_ids(&pm)).unwrap(),
             soft_vote(&reversed, &all_ids(&reversed)).unwrap()),
            (weighted_soft_vote(&pm, &tw).unwrap(),
             weighted_soft_vote(&reversed, &tw).unwrap()),
        ] {
            assert_eq!(a.labels, b.labels);
        }
    }

    #[test]
    fn subset_voting_restricts_models() {
        let pm = matrix_from_argmax(&[&[0], &[1], &[1]], 2);
        // All three: b wins 2-1. Subset {m0}: a wins.
        assert_eq!(plurality_vote(&pm, &all_ids(&pm)).unwrap().labels, vec![1]);
        assert_eq!(
            plurality_vote(&pm, &["m0".to_string()]).unwrap().labels,
            vec![0]
        );
    }

    #[test]
    fn tier_weights_validate_and_round_trip() {
        assert!(TierWeights::new([("a".to_string(), 0.0)]).is_err());
        assert!(TierWeights::new([("a".to_string(), -1.0)]).is_err());
        assert!(TierWeights::new([("a".to_string(), f64::NAN)]).is_err());
        assert!(TierWeights::new([
            ("a".to_string(), 1.0),
            ("a".to_string(), 2.0)
        ])
        .is_err());
        let tw = TierWeights::from_tiers([
            ("top1".to_string(), Tier::Top),
            ("mid1".to_string(), Tier::Middle),
            ("bot1".to_string(), Tier::Bottom),
        ])
        .unwrap();
        assert_eq!(tw.get("top1"), Some(45.0));
        assert_eq!(tw.get("mid1"), Some(9.0));
        assert_eq!(tw.get("bot1"), Some(1.0));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.csv");
        tw.save(&path).unwrap();
        assert_eq!(TierWeights::load(&path).unwrap(), tw);
    }

    #[test]
    fn prediction_matrix_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(143);
        let pm = random_matrix(&mut rng, 3, 5, 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pm.csv");
        save_prediction_matrix(&pm, &path).unwrap();
        let (loaded, warnings) = load_prediction_matrix(&path).unwrap();
        assert_eq!(loaded, pm);
        assert!(warnings.is_empty(), "exact rows need no renormalization: {warnings:?}");
    }

    #[test]
    fn prediction_matrix_load_renormalizes_within_tolerance() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pm.csv");
        std::fs::write(
            &path,
            "model_id,sample_id,a,b\nm0,s0,0.6000004,0.4000006\nm0,s1,0.5,0.5\n",
        )
        .unwrap();
        let (pm, warnings) = load_prediction_matrix(&path).unwrap();
        assert_eq!(warnings.len(), 1, "one row was renormalized: {warnings:?}");
        let row = pm.row(0, 0).probs();
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((row[0] - 0.6).abs() < 1e-6);

        // A row outside the tolerance is an error.
        std::fs::write(&path, "model_id,sample_id,a,b\nm0,s0,0.25,0.25\n").unwrap();
        assert!(load_prediction_matrix(&path).is_err());
        // Negative probabilities are errors even if the sum is right.
        std::fs::write(&path, "model_id,sample_id,a,b\nm0,s0,-0.5,1.5\n").unwrap();
        assert!(load_prediction_matrix(&path).is_err());
        // Ragged model blocks are errors.
        std::fs::write(
            &path,
            "model_id,sample_id,a,b\nm0,s0,0.5,0.5\nm0,s1,0.5,0.5\nm1,s0,0.5,0.5\n",
        )
        .unwrap();
        assert!(load_prediction_matrix(&path).is_err());
    }

    #[test]
    fn prediction_matrix_validates_shapes() {
        // Wrong class count.
        let bad = PredictionMatrix::new(
            vec!["m0".into()],
            vec!["s0".into()],
            lower(2),
            vec![vec![ClassProbabilities::new(vec![1.0]).unwrap()]],
        );
        assert!(bad.is_err());
        // Duplicate model ids.
        let bad = PredictionMatrix::new(
            vec!["m0".into(), "m0".into()],
            vec!["s0".into()],
            lower(2),
            vec![
                vec![onehot(2, 0)],
                vec![onehot(2, 1)],
            ],
        );
        assert!(bad.is_err());
        // Duplicate class symbols.
        let bad = PredictionMatrix::new(
            vec!["m0".into()],
            vec!["s0".into()],
            vec!['a', 'a'],
            vec![vec![onehot(2, 0)]],
        );
        assert!(bad.is_err());
    }
}
