//! Feature selection: per-feature, per-class relevance tests with false
//! discovery rate control.
//!
//! Every feature column is tested one-vs-rest against every class with a
//! two-sided Mann-Whitney U test; each class's p-value column then passes
//! through the Benjamini-Yekutieli procedure, and a feature is kept when it
//! is significant for at least `n_significant` classes. Only training rows
//! ever enter the fit; [`project`] applies a frozen selection to new data.

use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::LabelAlphabet;
use crate::features::{FeatureDescriptor, FeatureMatrix};
use crate::io::parse_f64;
use crate::{Error, Result};

/// Group sizes up to this bound use exact permutation enumeration; larger
/// groups use the tie-corrected normal approximation.
const EXACT_LIMIT: usize = 8;

// ---------------------------------------------------------- mann-whitney

/// Average ranks (1-based) of the combined values, doubled so that tied
/// averages stay integers.
fn double_ranks(values: &[f64]) -> Vec<u64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).expect("finite values"));
    let mut ranks2 = vec![0u64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share the average; doubled it is (i + j + 2)
        let r2 = (i + j + 2) as u64;
        for &idx in &order[i..=j] {
            ranks2[idx] = r2;
        }
        i = j + 1;
    }
    ranks2
}

/// Two-sided Mann-Whitney U p-value for `a` vs `b`.
///
/// Both groups at most [`EXACT_LIMIT`]: exact permutation test over the
/// observed (tie-averaged) ranks. Otherwise: normal approximation with tie
/// correction and continuity correction. Degenerate inputs (an empty group
/// or all values identical) give 1.
pub fn mann_whitney_p(a: &[f64], b: &[f64]) -> f64 {
    let n1 = a.len();
    let n2 = b.len();
    if n1 == 0 || n2 == 0 {
        return 1.0;
    }
    let mut combined = Vec::with_capacity(n1 + n2);
    combined.extend_from_slice(a);
    combined.extend_from_slice(b);
    let first = combined[0];
    if combined.iter().all(|&v| v == first) {
        return 1.0;
    }
    let ranks2 = double_ranks(&combined);

    // doubled U1 = doubled rank sum of group a minus n1 (n1 + 1)
    let r2a: u64 = ranks2[..n1].iter().sum();
    let u2_obs = r2a - (n1 * (n1 + 1)) as u64;

    if n1 <= EXACT_LIMIT && n2 <= EXACT_LIMIT {
        exact_two_sided(&ranks2, n1, u2_obs)
    } else {
        normal_two_sided(&combined, &ranks2, n1, n2, u2_obs)
    }
}

/// Exact permutation test: every way of assigning `n1` of the observed
/// ranks to group a, counting assignments at least as extreme (in |U - mu|)
/// as observed. All arithmetic on doubled ranks stays in integers.
fn exact_two_sided(ranks2: &[u64], n1: usize, u2_obs: u64) -> f64 {
    let n = ranks2.len();
    let n2 = n - n1;
    let mu2 = (n1 * n2) as u64; // doubled mean of U = n1 n2 / 2, doubled
    let obs_dev = u2_obs.abs_diff(mu2);
    let base = (n1 * (n1 + 1)) as u64;

    let mut extreme = 0u64;
    let mut total = 0u64;
    // iterate subsets of size n1 via indices
    let mut idx: Vec<usize> = (0..n1).collect();
    loop {
        let r2: u64 = idx.iter().map(|&i| ranks2[i]).sum();
        let u2 = r2 - base;
        if u2.abs_diff(mu2) >= obs_dev {
            extreme += 1;
        }
        total += 1;
        // next combination in lexicographic order
        let mut i = n1;
        loop {
            if i == 0 {
                return extreme as f64 / total as f64;
            }
            i -= 1;
            if idx[i] != i + n - n1 {
                break;
            }
        }
        idx[i] += 1;
        for j in i + 1..n1 {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Normal approximation with tie correction:
/// `sigma^2 = (n1 n2 / 12) ((n + 1) - sum(t^3 - t) / (n (n - 1)))`,
/// continuity correction of one half toward the mean.
fn normal_two_sided(combined: &[f64], ranks2: &[u64], n1: usize, n2: usize, u2_obs: u64) -> f64 {
    let n = n1 + n2;
    // tie group sizes: count how many share each doubled rank
    let mut counts = std::collections::HashMap::new();
    for &r in ranks2 {
        *counts.entry(r).or_insert(0usize) += 1;
    }
    debug_assert_eq!(combined.len(), n);
    let tie_term: f64 = counts
        .values()
        .map(|&t| (t * t * t - t) as f64)
        .sum::<f64>()
        / (n * (n - 1)) as f64;
    let sigma2 = (n1 * n2) as f64 / 12.0 * ((n + 1) as f64 - tie_term);
    if sigma2 <= 0.0 {
        return 1.0;
    }
    let dev = u2_obs.abs_diff((n1 * n2) as u64) as f64 / 2.0;
    let z = (dev - 0.5) / sigma2.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (2.0 * normal.cdf(-z)).clamp(0.0, 1.0)
}

// --------------------------------------------------------- p-value table

/// Per-feature, per-class two-sided p-values.
#[derive(Debug, Clone)]
pub struct PValueTable {
    /// `p[feature][class]`.
    pub p: Vec<Vec<f64>>,
    /// Classes with fewer than 2 samples, whose columns were set to 1.
    pub small_classes: Vec<usize>,
}

/// Mann-Whitney p-values of every feature against every class,
/// one-vs-rest. Classes with fewer than 2 samples (on either side) get a
/// column of ones and are flagged.
pub fn relevance_pvalues(fm: &FeatureMatrix, alphabet: &LabelAlphabet) -> Result<PValueTable> {
    if fm.n_samples() < 2 {
        return Err(Error::invalid("need at least 2 samples to test relevance"));
    }
    let n_classes = alphabet.len();
    let mut memberships: Vec<Vec<bool>> = Vec::with_capacity(n_classes);
    let mut small = Vec::new();
    for c in 0..n_classes {
        let member: Vec<bool> = fm
            .labels
            .iter()
            .map(|&l| alphabet.index_of(l) == Some(c))
            .collect();
        let k = member.iter().filter(|&&m| m).count();
        if k < 2 || fm.n_samples() - k < 2 {
            small.push(c);
        }
        memberships.push(member);
    }
    let p: Vec<Vec<f64>> = (0..fm.n_features())
        .into_par_iter()
        .map(|f| {
            let col = fm.column(f);
            memberships
                .iter()
                .enumerate()
                .map(|(c, member)| {
                    if small.contains(&c) {
                        return 1.0;
                    }
                    let mut group = Vec::new();
                    let mut rest = Vec::new();
                    for (v, &m) in col.iter().zip(member) {
                        if m {
                            group.push(*v);
                        } else {
                            rest.push(*v);
                        }
                    }
                    mann_whitney_p(&group, &rest)
                })
                .collect()
        })
        .collect();
    Ok(PValueTable {
        p,
        small_classes: small,
    })
}

// --------------------------------------------------- benjamini-yekutieli

/// Benjamini-Yekutieli rejection set at FDR level `q`: sort p ascending,
/// find the largest k with `p_(k) <= k q / (m c(m))` where
/// `c(m) = sum_{i=1..m} 1/i`, and reject the k smallest. The result is
/// reported in the input order.
pub fn benjamini_yekutieli(pvals: &[f64], q: f64) -> Result<Vec<bool>> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid(format!("FDR level must be in (0,1), got {q}")));
    }
    for (i, &p) in pvals.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("p-value {p} at index {i} outside [0,1]")));
        }
    }
    let m = pvals.len();
    if m == 0 {
        return Ok(Vec::new());
    }
    let c_m: f64 = (1..=m).map(|i| 1.0 / i as f64).sum();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| pvals[i].partial_cmp(&pvals[j]).expect("finite p"));
    let mut k_max = 0;
    for (rank0, &idx) in order.iter().enumerate() {
        let k = rank0 + 1;
        if pvals[idx] <= k as f64 * q / (m as f64 * c_m) {
            k_max = k;
        }
    }
    let mut reject = vec![false; m];
    for &idx in order.iter().take(k_max) {
        reject[idx] = true;
    }
    Ok(reject)
}

// -------------------------------------------------------------- selection

/// Outcome of [`select_features`]: the per-class significance matrix over
/// all input features plus the surviving feature set.
#[derive(Debug, Clone)]
pub struct SelectionResult {
    /// All tested descriptors, in input order.
    pub descriptors: Vec<FeatureDescriptor>,
    /// `per_class_significant[feature][class]`.
    pub per_class_significant: Vec<Vec<bool>>,
    /// Row sums of the significance matrix.
    pub significant_counts: Vec<usize>,
    /// Indices (into `descriptors`) of selected features, ascending.
    pub selected_indices: Vec<usize>,
    pub n_significant: usize,
    pub fdr_q: f64,
}

impl SelectionResult {
    /// Selected descriptors in training order.
    pub fn selected(&self) -> Vec<FeatureDescriptor> {
        self.selected_indices
            .iter()
            .map(|&i| self.descriptors[i].clone())
            .collect()
    }
}

/// Select the features significant for at least `n_significant` classes,
/// applying Benjamini-Yekutieli at level `q` to each class's p-value
/// column separately. Reads only the given (training) matrix.
pub fn select_features(
    fm: &FeatureMatrix,
    alphabet: &LabelAlphabet,
    n_significant: usize,
    q: f64,
) -> Result<SelectionResult> {
    if n_significant == 0 || n_significant > alphabet.len() {
        return Err(Error::invalid(format!(
            "n_significant must be in 1..={}, got {n_significant}",
            alphabet.len()
        )));
    }
    let table = relevance_pvalues(fm, alphabet)?;
    let n_features = fm.n_features();
    let n_classes = alphabet.len();
    let mut per_class = vec![vec![false; n_classes]; n_features];
    for c in 0..n_classes {
        let column: Vec<f64> = (0..n_features).map(|f| table.p[f][c]).collect();
        let reject = benjamini_yekutieli(&column, q)?;
        for (f, &r) in reject.iter().enumerate() {
            per_class[f][c] = r;
        }
    }
    let counts: Vec<usize> = per_class
        .iter()
        .map(|row| row.iter().filter(|&&b| b).count())
        .collect();
    let selected: Vec<usize> = counts
        .iter()
        .enumerate()
        .filter(|&(_, &c)| c >= n_significant)
        .map(|(f, _)| f)
        .collect();
    Ok(SelectionResult {
        descriptors: fm.descriptors.clone(),
        per_class_significant: per_class,
        significant_counts: counts,
        selected_indices: selected,
        n_significant,
        fdr_q: q,
    })
}

/// Restrict a feature matrix to the given descriptor set, in that order.
/// Errors when the selection is empty or a descriptor is missing; never
/// consults labels.
pub fn project(fm: &FeatureMatrix, selected: &[FeatureDescriptor]) -> Result<FeatureMatrix> {
    if selected.is_empty() {
        return Err(Error::invalid("no features selected"));
    }
    let mut by_render = std::collections::HashMap::new();
    for (i, d) in fm.descriptors.iter().enumerate() {
        by_render.insert(d.render(), i);
    }
    let mut cols = Vec::with_capacity(selected.len());
    for d in selected {
        let r = d.render();
        match by_render.get(&r) {
            Some(&i) => cols.push(i),
            None => {
                return Err(Error::invalid(format!(
                    "feature matrix is missing selected descriptor {r}"
                )))
            }
        }
    }
    let values = fm
        .values
        .iter()
        .map(|row| cols.iter().map(|&i| row[i]).collect())
        .collect();
    FeatureMatrix::new(
        fm.sample_ids.clone(),
        fm.labels.clone(),
        selected.to_vec(),
        values,
    )
}

// ---------------------------------------------------------------- files

/// Write a selection as text: `key<TAB>value` header lines, then one
/// `descriptor<TAB>significant-class-count` line per selected feature.
pub fn write_selection(sel: &SelectionResult, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?,
    );
    let io_err = |e| Error::io(path.display().to_string(), e);
    writeln!(w, "n_significant\t{}", sel.n_significant).map_err(io_err)?;
    writeln!(w, "fdr_q\t{}", crate::io::fmt_g17(sel.fdr_q)).map_err(io_err)?;
    writeln!(w, "n_features\t{}", sel.descriptors.len()).map_err(io_err)?;
    writeln!(w, "n_selected\t{}", sel.selected_indices.len()).map_err(io_err)?;
    for &i in &sel.selected_indices {
        writeln!(
            w,
            "{}\t{}",
            sel.descriptors[i].render(),
            sel.significant_counts[i]
        )
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

/// A selection loaded back from disk: enough to project test data.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSelection {
    pub n_significant: usize,
    pub fdr_q: f64,
    pub n_features: usize,
    /// Selected descriptors with their significant-class counts.
    pub entries: Vec<(FeatureDescriptor, usize)>,
}

impl LoadedSelection {
    pub fn descriptors(&self) -> Vec<FeatureDescriptor> {
        self.entries.iter().map(|(d, _)| d.clone()).collect()
    }
}

/// Read a file written by [`write_selection`].
pub fn read_selection(path: &Path) -> Result<LoadedSelection> {
    let paths = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(paths.clone(), e))?;
    let reader = std::io::BufReader::new(file);
    let mut n_significant = None;
    let mut fdr_q = None;
    let mut n_features = None;
    let mut n_selected = None;
    let mut entries = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(paths.clone(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: paths.clone(),
            line: lineno + 1,
            message,
        };
        let (key, value) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("expected two tab-separated fields".into()))?;
        match key {
            "n_significant" => {
                n_significant = Some(value.parse().map_err(|_| {
                    parse_err(format!("bad n_significant {value:?}"))
                })?)
            }
            "fdr_q" => fdr_q = Some(parse_f64(value, &paths, lineno + 1)?),
            "n_features" => {
                n_features =
                    Some(value.parse().map_err(|_| parse_err(format!("bad n_features {value:?}"))).unwrap_or(0))
            }
            "n_selected" => {
                n_selected = Some(
                    value
                        .parse::<usize>()
                        .map_err(|_| parse_err(format!("bad n_selected {value:?}")))?,
                )
            }
            desc => {
                let d = FeatureDescriptor::parse(desc)?;
                let count: usize = value
                    .parse()
                    .map_err(|_| parse_err(format!("bad count {value:?}")))?;
                entries.push((d, count));
            }
        }
    }
    let missing = |what: &str| Error::Parse {
        path: paths.clone(),
        line: 1,
        message: format!("missing {what} header"),
    };
    let loaded = LoadedSelection {
        n_significant: n_significant.ok_or_else(|| missing("n_significant"))?,
        fdr_q: fdr_q.ok_or_else(|| missing("fdr_q"))?,
        n_features: n_features.ok_or_else(|| missing("n_features"))?,
        entries,
    };
    if let Some(n) = n_selected {
        if n != loaded.entries.len() {
            return Err(Error::Parse {
                path: paths,
                line: 1,
                message: format!("n_selected says {n} but file has {} entries", loaded.entries.len()),
            });
        }
    }
    Ok(loaded)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CaseMode;
    use crate::features::Extractor;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() < tol, "got {a}, expected {b}");
    }

    // -------------------------------------------------- mann-whitney u

    #[test]
    fn exact_p_for_fully_separated_small_groups() {
        // ranks 1..6, U=0; only U=0 and U=9 are as extreme: 2/20
        let p = mann_whitney_p(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]);
        close(p, 0.1, 1e-15);
        // symmetric
        let p = mann_whitney_p(&[4.0, 5.0, 6.0], &[1.0, 2.0, 3.0]);
        close(p, 0.1, 1e-15);
    }

    #[test]
    fn normal_approximation_matches_reference_values() {
        let a: Vec<f64> = (0..10).map(|i| 1.0 + i as f64 * 0.01).collect();
        let b: Vec<f64> = (0..10).map(|i| i as f64 * 0.01).collect();
        // frozen from an independent asymptotic evaluation; tolerance covers
        // normal-CDF implementation differences, not statistic errors
        close(mann_whitney_p(&a, &b), 0.00018267179110955002, 1e-9);
        assert!(mann_whitney_p(&a, &b) < 1e-3);

        let a = [1.0, 2.0, 2.0, 3.0, 4.0, 5.0, 5.0, 6.0, 7.0];
        let b = [2.0, 3.0, 3.0, 4.0, 5.0, 6.0, 6.0, 7.0, 8.0];
        close(mann_whitney_p(&a, &b), 0.32685270253343912, 1e-9);
    }

    #[test]
    fn degenerate_groups_give_one() {
        assert_eq!(mann_whitney_p(&[], &[1.0]), 1.0);
        assert_eq!(mann_whitney_p(&[1.0, 1.0], &[1.0, 1.0, 1.0]), 1.0);
    }

    #[test]
    fn exact_path_agrees_with_direct_enumeration() {
        // independent oracle: enumerate assignments recursively over the
        // tie-averaged ranks and count extreme ones
        fn oracle(a: &[f64], b: &[f64]) -> f64 {
            let n1 = a.len();
            let mut all: Vec<f64> = a.iter().chain(b).cloned().collect();
            let ranks2 = double_ranks(&all);
            all.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let n = ranks2.len();
            let mu2 = (n1 * (n - n1)) as i64;
            let base = (n1 * (n1 + 1)) as i64;
            let obs: i64 = ranks2[..n1].iter().map(|&r| r as i64).sum::<i64>() - base;
            let obs_dev = (obs - mu2).abs();
            fn rec(
                ranks2: &[u64],
                start: usize,
                left: usize,
                acc: i64,
                base: i64,
                mu2: i64,
                obs_dev: i64,
                hits: &mut (u64, u64),
            ) {
                if left == 0 {
                    let u2 = acc - base;
                    if (u2 - mu2).abs() >= obs_dev {
                        hits.0 += 1;
                    }
                    hits.1 += 1;
                    return;
                }
                if ranks2.len() - start < left {
                    return;
                }
                rec(ranks2, start + 1, left - 1, acc + ranks2[start] as i64, base, mu2, obs_dev, hits);
                rec(ranks2, start + 1, left, acc, base, mu2, obs_dev, hits);
            }
            let mut hits = (0, 0);
            rec(&ranks2, 0, n1, 0, base, mu2, obs_dev, &mut hits);
            hits.0 as f64 / hits.1 as f64
        }

        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n1 = rng.random_range(1..=6);
            let n2 = rng.random_range(1..=6);
            // grid values force plenty of ties
            let a: Vec<f64> = (0..n1).map(|_| rng.random_range(0..4) as f64).collect();
            let b: Vec<f64> = (0..n2).map(|_| rng.random_range(0..4) as f64).collect();
            let got = mann_whitney_p(&a, &b);
            let want = oracle(&a, &b);
            close(got, want, 1e-12);
        }
    }

    #[test]
    fn p_invariant_under_monotone_transforms() {
        let a = [0.3, 1.2, 0.7, 2.5, 0.9, 1.1, 3.0, 0.2, 1.9, 2.2, 0.4];
        let b = [1.3, 2.2, 1.7, 3.5, 1.9, 2.1, 4.0, 1.2, 2.9];
        let p0 = mann_whitney_p(&a, &b);
        let ea: Vec<f64> = a.iter().map(|v| v.exp()).collect();
        let eb: Vec<f64> = b.iter().map(|v| v.exp()).collect();
        assert_eq!(p0.to_bits(), mann_whitney_p(&ea, &eb).to_bits());
        let la: Vec<f64> = a.iter().map(|v| v.ln()).collect();
        let lb: Vec<f64> = b.iter().map(|v| v.ln()).collect();
        assert_eq!(p0.to_bits(), mann_whitney_p(&la, &lb).to_bits());
    }

    // ------------------------------------------------ benjamini-yekutieli

    #[test]
    fn by_worked_example() {
        // m=3, c(3)=11/6: thresholds k*q/(m c(m)) = 0.00909.., 0.01818..,
        // 0.02727..; 0.001 and 0.01 pass, 0.04 does not
        let reject = benjamini_yekutieli(&[0.001, 0.01, 0.04], 0.05).unwrap();
        assert_eq!(reject, [true, true, false]);
        // same in shuffled input order
        let reject = benjamini_yekutieli(&[0.04, 0.001, 0.01], 0.05).unwrap();
        assert_eq!(reject, [false, true, true]);
    }

    #[test]
    fn by_edge_cases() {
        assert!(benjamini_yekutieli(&[], 0.05).unwrap().is_empty());
        let none = benjamini_yekutieli(&[1.0, 1.0, 1.0], 0.05).unwrap();
        assert!(none.iter().all(|&r| !r));
        let one = benjamini_yekutieli(&[0.0], 0.001).unwrap();
        assert_eq!(one, [true]);
        assert!(benjamini_yekutieli(&[0.5], 0.0).is_err());
        assert!(benjamini_yekutieli(&[0.5], 1.0).is_err());
        assert!(benjamini_yekutieli(&[1.5], 0.05).is_err());
    }

    #[test]
    fn by_rejections_shrink_as_q_shrinks() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let m = rng.random_range(1..40);
            let p: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
            let loose = benjamini_yekutieli(&p, 0.2).unwrap();
            let tight = benjamini_yekutieli(&p, 0.01).unwrap();
            for (t, l) in tight.iter().zip(&loose) {
                assert!(!t | l, "tight rejected where loose did not");
            }
        }
    }

    // ---------------------------------------------------------- selection

    fn labelled_matrix() -> (FeatureMatrix, LabelAlphabet) {
        // 3 classes, 12 samples each; feature 0 separates class a, feature
        // 1 separates class b, feature 2 is constant, feature 3 is noise
        let alphabet = LabelAlphabet::new(CaseMode::Lower);
        let mut ids = Vec::new();
        let mut labels = Vec::new();
        let mut rows = Vec::new();
        let noise = [0.3, 0.9, 0.1, 0.7, 0.5, 0.2, 0.8, 0.4, 0.6, 0.35, 0.65, 0.15];
        for (ci, label) in ['a', 'b', 'c'].into_iter().enumerate() {
            for k in 0..12 {
                ids.push(format!("{label}{k}"));
                labels.push(label);
                let f0 = if label == 'a' { 10.0 + k as f64 * 0.01 } else { k as f64 * 0.01 };
                let f1 = if label == 'b' { 5.0 + k as f64 * 0.01 } else { -(k as f64) * 0.01 };
                let f2 = 2.5;
                let f3 = noise[(k + ci) % 12];
                rows.push(vec![f0, f1, f2, f3]);
            }
        }
        let descriptors = vec![
            FeatureDescriptor::new(0, Extractor::Mean).unwrap(),
            FeatureDescriptor::new(0, Extractor::Variance).unwrap(),
            FeatureDescriptor::new(0, Extractor::Median).unwrap(),
            FeatureDescriptor::new(0, Extractor::Max).unwrap(),
        ];
        (
            FeatureMatrix::new(ids, labels, descriptors, rows).unwrap(),
            alphabet,
        )
    }

    #[test]
    fn informative_features_are_selected_and_constant_ones_are_not() {
        let (fm, alphabet) = labelled_matrix();
        let sel = select_features(&fm, &alphabet, 1, 0.05).unwrap();
        assert!(sel.selected_indices.contains(&0));
        assert!(sel.selected_indices.contains(&1));
        assert!(!sel.selected_indices.contains(&2), "constant feature kept");
        // the class-a indicator separates a-vs-rest AND b-vs-rest AND
        // c-vs-rest? no: b and c rows both sit at the low level, so
        // feature 0 discriminates only class a
        assert_eq!(sel.significant_counts[2], 0);

        // the invariant: selected iff count >= n_significant
        for (f, &count) in sel.significant_counts.iter().enumerate() {
            assert_eq!(
                sel.selected_indices.contains(&f),
                count >= sel.n_significant
            );
        }
    }

    #[test]
    fn selection_shrinks_as_n_significant_grows() {
        let (fm, alphabet) = labelled_matrix();
        let s1 = select_features(&fm, &alphabet, 1, 0.05).unwrap();
        let s2 = select_features(&fm, &alphabet, 2, 0.05).unwrap();
        let s3 = select_features(&fm, &alphabet, 26, 0.05).unwrap();
        for i in &s2.selected_indices {
            assert!(s1.selected_indices.contains(i));
        }
        for i in &s3.selected_indices {
            assert!(s2.selected_indices.contains(i));
        }
        assert!(s1.selected_indices.len() >= s2.selected_indices.len());
        assert!(s2.selected_indices.len() >= s3.selected_indices.len());
        assert!(select_features(&fm, &alphabet, 0, 0.05).is_err());
        assert!(select_features(&fm, &alphabet, 27, 0.05).is_err());
    }

    #[test]
    fn small_classes_are_flagged_with_unit_pvalues() {
        let alphabet = LabelAlphabet::new(CaseMode::Lower);
        let ids: Vec<String> = (0..5).map(|i| format!("s{i}")).collect();
        let labels = vec!['a', 'a', 'b', 'b', 'c']; // class c has 1 sample
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        let descriptors = vec![FeatureDescriptor::new(0, Extractor::Mean).unwrap()];
        let fm = FeatureMatrix::new(ids, labels, descriptors, rows).unwrap();
        let t = relevance_pvalues(&fm, &alphabet).unwrap();
        let c_idx = alphabet.index_of('c').unwrap();
        assert!(t.small_classes.contains(&c_idx));
        assert_eq!(t.p[0][c_idx], 1.0);
        // absent classes are flagged too
        assert!(t.small_classes.contains(&alphabet.index_of('z').unwrap()));
    }

    // ----------------------------------------------------------- project

    #[test]
    fn projection_restricts_and_orders_columns() {
        let (fm, alphabet) = labelled_matrix();
        let sel = select_features(&fm, &alphabet, 1, 0.05).unwrap();
        let projected = project(&fm, &sel.selected()).unwrap();
        assert_eq!(projected.n_features(), sel.selected_indices.len());
        assert_eq!(projected.n_samples(), fm.n_samples());
        for (j, &src) in sel.selected_indices.iter().enumerate() {
            assert_eq!(projected.descriptors[j], fm.descriptors[src]);
            for i in 0..fm.n_samples() {
                assert_eq!(projected.values[i][j], fm.values[i][src]);
            }
        }
        // idempotent
        let twice = project(&projected, &sel.selected()).unwrap();
        assert_eq!(twice, projected);
    }

    #[test]
    fn projection_errors() {
        let (fm, _) = labelled_matrix();
        let err = project(&fm, &[]).unwrap_err();
        assert!(err.to_string().contains("no features selected"));
        let missing = FeatureDescriptor::new(7, Extractor::SampleEntropy).unwrap();
        let err = project(&fm, &[missing]).unwrap_err();
        assert!(err.to_string().contains("sample_entropy"));
    }

    // --------------------------------------------------------------- file

    #[test]
    fn selection_file_round_trip() {
        let (fm, alphabet) = labelled_matrix();
        let sel = select_features(&fm, &alphabet, 1, 0.05).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("selection.tsv");
        write_selection(&sel, &path).unwrap();
        let loaded = read_selection(&path).unwrap();
        assert_eq!(loaded.n_significant, sel.n_significant);
        assert_eq!(loaded.fdr_q, sel.fdr_q);
        assert_eq!(loaded.n_features, sel.descriptors.len());
        assert_eq!(loaded.descriptors(), sel.selected());
        for ((_, count), &i) in loaded.entries.iter().zip(&sel.selected_indices) {
            assert_eq!(*count, sel.significant_counts[i]);
        }
    }
}
