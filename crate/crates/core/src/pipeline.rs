//! End-to-end classification pipelines. A [`PipelineConfig`] describes one
//! model: signal conditioning, then either the feature route (extraction,
//! hypothesis-test selection, scaling, optional learned projection, Euclidean
//! k-NN) or the raw-series route (elastic-distance k-NN). Fitting touches
//! training data only; the resulting [`FittedPipeline`] is a persistable
//! artifact applied verbatim to held-out recordings. The module also hosts
//! hyper-parameter sweeps and a synthetic dataset generator used by the
//! end-to-end suites.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::analysis;
use crate::classifiers::{
    knn_fit_series, knn_fit_vectors, ClassProbabilities, DtwMode, Metric, NeighborModel,
};
use crate::data::{CaseMode, Dataset, LabelAlphabet, Role, Sample, SplitSpec, CHANNEL_COUNT};
use crate::features::{catalog_default, extract, FeatureDescriptor, FeatureMatrix};
use crate::io::fmt_g17;
use crate::preprocess::{
    highpass_dataset, moving_average_dataset, trim_outliers, FilterSpec, TrimSpec,
};
use crate::selection::{project, select_features};
use crate::transforms::{
    fit_lda, fit_nca, fit_pca, fit_quantile, fit_standardize, LinearMap, NcaOptions, NcaReport,
    QuantileMap,
};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Signal-conditioning stage. Filtering and smoothing are stateless per-sample
/// operations applied identically at fit and predict time; trimming discards
/// length outliers and therefore only ever runs on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    /// Zero-phase high-pass filter; `None` disables it.
    pub filter: Option<FilterSpec>,
    /// Odd moving-average window; `None` disables smoothing.
    pub smooth_window: Option<usize>,
    /// Length bounds for outlier removal on the training side.
    pub trim: Option<TrimSpec>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            filter: Some(
                FilterSpec::new(1.0, 200.0, 2, FilterSpec::accelerometer_targets())
                    .expect("default filter spec is valid"),
            ),
            smooth_window: Some(11),
            trim: None,
        }
    }
}

impl PreprocessConfig {
    /// The stateless conditioning shared by fit and predict: filtering, then
    /// smoothing. Returns warnings for recordings too short to filter.
    pub fn condition(&self, ds: &Dataset) -> Result<(Dataset, Vec<String>)> {
        let mut warnings = Vec::new();
        let mut current = ds.clone();
        if let Some(spec) = &self.filter {
            let (filtered, w) = highpass_dataset(&current, spec)?;
            warnings.extend(w);
            current = filtered;
        }
        if let Some(window) = self.smooth_window {
            current = moving_average_dataset(&current, window)?;
        }
        Ok((current, warnings))
    }

    /// Training-side preparation: conditioning plus optional length trimming.
    pub fn prepare_training(&self, ds: &Dataset) -> Result<(Dataset, Vec<String>)> {
        let (mut current, mut warnings) = self.condition(ds)?;
        if let Some(spec) = &self.trim {
            let (trimmed, discards) = trim_outliers(&current, spec)?;
            for d in discards {
                warnings.push(format!("trimmed sample {} (length {}): {}", d.id, d.len, d.reason));
            }
            current = trimmed;
        }
        Ok((current, warnings))
    }
}

/// Feature-scaling stage of the feature route.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Scaling {
    None,
    /// Rank-based map of every feature onto `[0, 1]`.
    Quantile { n_quantiles: usize },
    /// Per-feature zero mean / unit variance.
    Standardize,
}

impl Scaling {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scaling::None => "none",
            Scaling::Quantile { .. } => "quantile",
            Scaling::Standardize => "standardize",
        }
    }
}

/// Optional learned projection applied after scaling.
#[derive(Debug, Clone, PartialEq)]
pub enum Projection {
    None,
    Pca { n_components: usize },
    Lda { n_components: usize },
    /// Metric learning seeded from the discriminant directions.
    Nca { n_components: usize, options: NcaOptions },
}

impl Projection {
    pub fn as_str(&self) -> &'static str {
        match self {
            Projection::None => "none",
            Projection::Pca { .. } => "pca",
            Projection::Lda { .. } => "lda",
            Projection::Nca { .. } => "nca",
        }
    }
}

/// Which classifier route the pipeline takes after conditioning.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    /// extract -> select -> scale -> (project) -> Euclidean k-NN.
    FeatureKnn { k: usize, scaling: Scaling, projection: Projection },
    /// Elastic-distance k-NN straight on the conditioned series.
    SeriesKnn { k: usize, mode: DtwMode, band: Option<usize>, normalize: bool },
}

impl ModelSpec {
    pub fn k(&self) -> usize {
        match self {
            ModelSpec::FeatureKnn { k, .. } | ModelSpec::SeriesKnn { k, .. } => *k,
        }
    }
}

/// Complete description of one pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub preprocess: PreprocessConfig,
    /// Minimum number of classes a feature must test significant for.
    pub n_significant: usize,
    /// False-discovery level of the per-class multiple-testing correction.
    pub fdr_q: f64,
    pub model: ModelSpec,
    /// Base seed for the stochastic components built on top of the pipeline
    /// (sweep seed derivation, explanation masks). Fitting itself is
    /// deterministic.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            preprocess: PreprocessConfig::default(),
            n_significant: 17,
            fdr_q: 0.05,
            model: ModelSpec::FeatureKnn {
                k: 5,
                scaling: Scaling::Quantile { n_quantiles: 1000 },
                projection: Projection::None,
            },
            seed: 0,
        }
    }
}

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

/// Fitted scaling stage.
#[derive(Debug, Clone)]
pub enum FittedScaling {
    None,
    Quantile(QuantileMap),
    Linear(LinearMap),
}

impl FittedScaling {
    pub fn apply(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        match self {
            FittedScaling::None => Ok(rows.to_vec()),
            FittedScaling::Quantile(m) => m.apply(rows),
            FittedScaling::Linear(m) => m.apply(rows),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            FittedScaling::None => "none",
            FittedScaling::Quantile(_) => "quantile",
            FittedScaling::Linear(_) => "standardize",
        }
    }
}

/// Everything needed to score new recordings: the conditioning recipe and the
/// frozen stages. Built by [`fit_pipeline`] from training data only.
#[derive(Debug, Clone)]
pub struct FittedPipeline {
    pub preprocess: PreprocessConfig,
    pub alphabet: LabelAlphabet,
    /// Per-channel means of the prepared training data; the replacement
    /// values used when explaining predictions by segment perturbation.
    pub channel_means: Vec<f64>,
    /// Feature route only: the descriptors kept by selection, in order.
    pub selected: Option<Vec<FeatureDescriptor>>,
    pub scaling: FittedScaling,
    pub projection: Option<LinearMap>,
    pub model: NeighborModel,
}

/// Diagnostics from one fit.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub warnings: Vec<String>,
    /// Training samples that survived preparation.
    pub n_train_used: usize,
    /// Feature route only: how many features selection kept.
    pub n_selected: Option<usize>,
    /// Present when the projection stage ran the metric learner.
    pub nca: Option<NcaReport>,
}

/// Fitted feature-route stages, shared between [`fit_pipeline`] and the
/// matrix-reusing sweep path.
struct FeatureStage {
    selected: Vec<FeatureDescriptor>,
    scaling: FittedScaling,
    projection: Option<LinearMap>,
    model: NeighborModel,
    nca: Option<NcaReport>,
    warnings: Vec<String>,
}

fn fit_feature_stage(
    fm: &FeatureMatrix,
    classes: &[usize],
    alphabet: &LabelAlphabet,
    n_significant: usize,
    fdr_q: f64,
    k: usize,
    scaling: &Scaling,
    projection: &Projection,
) -> Result<FeatureStage> {
    let mut warnings = Vec::new();
    let selection = select_features(fm, alphabet, n_significant, fdr_q)?;
    let selected = selection.selected();
    if selected.is_empty() {
        return Err(Error::invalid(format!(
            "selection kept no features at n_significant = {n_significant}, q = {fdr_q}; \
             lower n_significant or raise q"
        )));
    }
    let mut rows = project(fm, &selected)?.values;

    let fitted_scaling = match scaling {
        Scaling::None => FittedScaling::None,
        Scaling::Quantile { n_quantiles } => {
            let map = fit_quantile(&rows, *n_quantiles)?;
            rows = map.apply(&rows)?;
            FittedScaling::Quantile(map)
        }
        Scaling::Standardize => {
            let map = fit_standardize(&rows)?;
            rows = map.apply(&rows)?;
            FittedScaling::Linear(map)
        }
    };

    let mut nca_report = None;
    let projection_map = match projection {
        Projection::None => None,
        Projection::Pca { n_components } => {
            let (map, _info) = fit_pca(&rows, *n_components)?;
            Some(map)
        }
        Projection::Lda { n_components } => {
            let (map, info) = fit_lda(&rows, classes, *n_components)?;
            if info.zero_between_scatter {
                warnings.push("class means coincide; discriminant directions are arbitrary".into());
            }
            Some(map)
        }
        Projection::Nca { n_components, options } => {
            let (init, info) = fit_lda(&rows, classes, *n_components)?;
            if info.zero_between_scatter {
                warnings.push("class means coincide; metric learning starts from noise".into());
            }
            let (map, report) = fit_nca(&rows, classes, &init, options)?;
            if !report.converged {
                warnings.push(format!(
                    "metric learning stopped at the iteration cap ({} steps)",
                    report.iterations()
                ));
            }
            nca_report = Some(report);
            Some(map)
        }
    };
    if let Some(map) = &projection_map {
        rows = map.apply(&rows)?;
    }

    let model = knn_fit_vectors(rows, classes.to_vec(), alphabet.len(), k)?;
    Ok(FeatureStage {
        selected,
        scaling: fitted_scaling,
        projection: projection_map,
        model,
        nca: nca_report,
        warnings,
    })
}

/// Applies fitted feature-route stages to a matrix that still carries the full
/// extraction catalog.
fn predict_feature_stage(
    stage: &FeatureStage,
    test_fm: &FeatureMatrix,
) -> Result<Vec<ClassProbabilities>> {
    let rows = project(test_fm, &stage.selected)?.values;
    let rows = stage.scaling.apply(&rows)?;
    let rows = match &stage.projection {
        Some(map) => map.apply(&rows)?,
        None => rows,
    };
    stage.model.predict_vectors(&rows)
}

/// Fits the configured pipeline on training data.
pub fn fit_pipeline(train: &Dataset, cfg: &PipelineConfig) -> Result<(FittedPipeline, FitReport)> {
    let (prepared, mut warnings) = cfg.preprocess.prepare_training(train)?;
    let classes = prepared.class_indices();
    let channel_means = crate::explain::training_channel_means(&prepared.samples)?;
    match &cfg.model {
        ModelSpec::SeriesKnn { k, mode, band, normalize } => {
            let model = knn_fit_series(
                &prepared.samples,
                classes,
                prepared.alphabet.len(),
                *k,
                *mode,
                *band,
                *normalize,
            )?;
            Ok((
                FittedPipeline {
                    preprocess: cfg.preprocess.clone(),
                    alphabet: prepared.alphabet.clone(),
                    channel_means,
                    selected: None,
                    scaling: FittedScaling::None,
                    projection: None,
                    model,
                },
                FitReport {
                    warnings,
                    n_train_used: prepared.len(),
                    n_selected: None,
                    nca: None,
                },
            ))
        }
        ModelSpec::FeatureKnn { k, scaling, projection } => {
            let fm = extract(&prepared, &catalog_default())?;
            let stage = fit_feature_stage(
                &fm,
                &classes,
                &prepared.alphabet,
                cfg.n_significant,
                cfg.fdr_q,
                *k,
                scaling,
                projection,
            )?;
            warnings.extend(stage.warnings);
            let n_selected = stage.selected.len();
            Ok((
                FittedPipeline {
                    preprocess: cfg.preprocess.clone(),
                    alphabet: prepared.alphabet.clone(),
                    channel_means,
                    selected: Some(stage.selected),
                    scaling: stage.scaling,
                    projection: stage.projection,
                    model: stage.model,
                },
                FitReport {
                    warnings,
                    n_train_used: prepared.len(),
                    n_selected: Some(n_selected),
                    nca: stage.nca,
                },
            ))
        }
    }
}

/// Scores of one prediction pass.
#[derive(Debug, Clone)]
pub struct PredictionOutput {
    pub probabilities: Vec<ClassProbabilities>,
    /// Elastic-distance evaluations whose band had to widen to stay feasible.
    pub band_widened: usize,
    pub warnings: Vec<String>,
}

impl FittedPipeline {
    /// Scores every sample of a dataset. The dataset is conditioned with the
    /// training recipe (never trimmed) and left untouched otherwise.
    pub fn predict_dataset(&self, ds: &Dataset) -> Result<PredictionOutput> {
        if ds.alphabet.case_mode() != self.alphabet.case_mode() {
            return Err(Error::invalid(format!(
                "dataset labels are {} but the pipeline was fitted on {}",
                ds.alphabet.case_mode().as_str(),
                self.alphabet.case_mode().as_str()
            )));
        }
        let (conditioned, warnings) = self.preprocess.condition(ds)?;
        match &self.selected {
            Some(descriptors) => {
                let fm = extract(&conditioned, descriptors)?;
                let rows = self.scaling.apply(&fm.values)?;
                let rows = match &self.projection {
                    Some(map) => map.apply(&rows)?,
                    None => rows,
                };
                let probabilities = self.model.predict_vectors(&rows)?;
                Ok(PredictionOutput { probabilities, band_widened: 0, warnings })
            }
            None => {
                let (probabilities, band_widened) =
                    self.model.predict_samples(&conditioned.samples)?;
                Ok(PredictionOutput { probabilities, band_widened, warnings })
            }
        }
    }

    /// Scores a single sample that has already been conditioned (filtered and
    /// smoothed). This is the black-box function behind explanation queries,
    /// which perturb the conditioned signal directly.
    pub fn predict_conditioned_sample(&self, sample: &Sample) -> Result<ClassProbabilities> {
        match &self.selected {
            Some(descriptors) => {
                let row: Vec<f64> = descriptors
                    .iter()
                    .map(|d| crate::features::extract_single(sample, d))
                    .collect();
                for (value, d) in row.iter().zip(descriptors) {
                    if !value.is_finite() {
                        return Err(Error::invalid(format!(
                            "feature {} is not finite on sample {}",
                            d.render(),
                            sample.id
                        )));
                    }
                }
                let rows = self.scaling.apply(&[row])?;
                let rows = match &self.projection {
                    Some(map) => map.apply(&rows)?,
                    None => rows,
                };
                let mut probs = self.model.predict_vectors(&rows)?;
                Ok(probs.pop().expect("one row in, one prediction out"))
            }
            None => {
                let (mut probs, _) = self.model.predict_samples(std::slice::from_ref(sample))?;
                Ok(probs.pop().expect("one sample in, one prediction out"))
            }
        }
    }
}

/// One train/evaluate round.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub accuracy: f64,
    /// Predicted class indices, one per test sample.
    pub predicted: Vec<usize>,
    /// True class indices.
    pub truth: Vec<usize>,
    pub probabilities: Vec<ClassProbabilities>,
    pub n_selected: Option<usize>,
    pub band_widened: usize,
    pub warnings: Vec<String>,
}

/// Fits on `train`, scores `test`, reports accuracy.
pub fn run_pipeline(
    train: &Dataset,
    test: &Dataset,
    cfg: &PipelineConfig,
) -> Result<PipelineOutcome> {
    let (fitted, report) = fit_pipeline(train, cfg)?;
    let mut warnings = report.warnings;
    let output = fitted.predict_dataset(test)?;
    warnings.extend(output.warnings);
    let predicted: Vec<usize> = output.probabilities.iter().map(|p| p.argmax()).collect();
    let truth = test.class_indices();
    let accuracy = analysis::accuracy(&predicted, &truth)?;
    Ok(PipelineOutcome {
        accuracy,
        predicted,
        truth,
        probabilities: output.probabilities,
        n_selected: report.n_selected,
        band_widened: output.band_widened,
        warnings,
    })
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

const PIPELINE_FILE: &str = "pipeline.txt";
const FEATURES_FILE: &str = "features.txt";
const SCALING_FILE: &str = "scaling.txt";
const PROJECTION_FILE: &str = "projection.txt";
const MODEL_FILE: &str = "model.txt";

/// Key/value lines of a pipeline descriptor with line numbers for errors.
struct KvFile {
    path: String,
    entries: BTreeMap<String, (String, usize)>,
}

impl KvFile {
    fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let display = path.display().to_string();
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: display.clone(),
                line: i + 1,
                message: format!("expected `key = value`, got {line:?}"),
            })?;
            let key = key.trim().to_string();
            if entries.insert(key.clone(), (value.trim().to_string(), i + 1)).is_some() {
                return Err(Error::Parse {
                    path: display,
                    line: i + 1,
                    message: format!("duplicate key {key:?}"),
                });
            }
        }
        Ok(KvFile { path: display, entries })
    }

    fn get(&self, key: &str) -> Result<&str> {
        self.entries
            .get(key)
            .map(|(v, _)| v.as_str())
            .ok_or_else(|| Error::invalid(format!("{}: missing key {key:?}", self.path)))
    }

    fn parse_err(&self, key: &str, message: String) -> Error {
        let line = self.entries.get(key).map(|&(_, l)| l).unwrap_or(0);
        Error::Parse { path: self.path.clone(), line, message }
    }

    fn get_usize(&self, key: &str) -> Result<usize> {
        let raw = self.get(key)?;
        raw.parse::<usize>()
            .map_err(|_| self.parse_err(key, format!("{key} must be a non-negative integer, got {raw:?}")))
    }

    fn get_f64(&self, key: &str) -> Result<f64> {
        let raw = self.get(key)?;
        raw.parse::<f64>()
            .map_err(|_| self.parse_err(key, format!("{key} must be a number, got {raw:?}")))
    }
}

impl FittedPipeline {
    /// Writes the pipeline into a directory: a `pipeline.txt` descriptor plus
    /// one file per fitted stage.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let mut text = String::from("artifact = pipeline\n");
        let kind = if self.selected.is_some() { "feature-knn" } else { "series-knn" };
        let _ = writeln!(text, "kind = {kind}");
        let _ = writeln!(text, "case = {}", self.alphabet.case_mode().as_str());
        match &self.preprocess.filter {
            Some(f) => {
                let _ = writeln!(text, "filter = on");
                let _ = writeln!(text, "filter.cutoff_hz = {}", fmt_g17(f.cutoff_hz));
                let _ = writeln!(text, "filter.sampling_hz = {}", fmt_g17(f.sampling_hz));
                let _ = writeln!(text, "filter.order = {}", f.order);
                let targets: Vec<String> = f.targets.iter().map(|t| t.to_string()).collect();
                let _ = writeln!(text, "filter.targets = {}", targets.join(","));
            }
            None => {
                let _ = writeln!(text, "filter = off");
            }
        }
        let _ = writeln!(text, "smooth_window = {}", self.preprocess.smooth_window.unwrap_or(0));
        match &self.preprocess.trim {
            Some(t) => {
                let _ = writeln!(text, "trim = on");
                let _ = writeln!(text, "trim.min_len = {}", t.min_len);
                let _ = writeln!(text, "trim.max_len = {}", t.max_len);
            }
            None => {
                let _ = writeln!(text, "trim = off");
            }
        }
        let _ = writeln!(text, "scaling = {}", self.scaling.kind());
        let _ = writeln!(text, "projection = {}", if self.projection.is_some() { "on" } else { "off" });
        let means: Vec<String> = self.channel_means.iter().map(|&v| fmt_g17(v)).collect();
        let _ = writeln!(text, "channel_means = {}", means.join(","));
        let descriptor = dir.join(PIPELINE_FILE);
        std::fs::write(&descriptor, text)
            .map_err(|e| Error::io(descriptor.display().to_string(), e))?;

        if let Some(selected) = &self.selected {
            let mut lines = String::new();
            for d in selected {
                let _ = writeln!(lines, "{}", d.render());
            }
            let path = dir.join(FEATURES_FILE);
            std::fs::write(&path, lines).map_err(|e| Error::io(path.display().to_string(), e))?;
        }
        match &self.scaling {
            FittedScaling::None => {}
            FittedScaling::Quantile(map) => map.save(&dir.join(SCALING_FILE))?,
            FittedScaling::Linear(map) => map.save(&dir.join(SCALING_FILE))?,
        }
        if let Some(map) = &self.projection {
            map.save(&dir.join(PROJECTION_FILE))?;
        }
        self.model.save(&dir.join(MODEL_FILE))
    }

    /// Reads a pipeline saved by [`FittedPipeline::save`].
    pub fn load(dir: &Path) -> Result<Self> {
        let kv = KvFile::read(&dir.join(PIPELINE_FILE))?;
        let artifact = kv.get("artifact")?;
        if artifact != "pipeline" {
            return Err(Error::invalid(format!(
                "{}: expected a pipeline descriptor, found artifact {artifact:?}",
                kv.path
            )));
        }
        let case = CaseMode::parse(kv.get("case")?)?;
        let filter = match kv.get("filter")? {
            "on" => {
                let raw_targets = kv.get("filter.targets")?;
                let mut targets = Vec::new();
                for part in raw_targets.split(',') {
                    let t = part.trim().parse::<usize>().map_err(|_| {
                        kv.parse_err(
                            "filter.targets",
                            format!("bad channel id {part:?} in {raw_targets:?}"),
                        )
                    })?;
                    targets.push(t);
                }
                Some(FilterSpec::new(
                    kv.get_f64("filter.cutoff_hz")?,
                    kv.get_f64("filter.sampling_hz")?,
                    kv.get_usize("filter.order")?,
                    targets,
                )?)
            }
            "off" => None,
            other => {
                return Err(kv.parse_err("filter", format!("filter must be on/off, got {other:?}")))
            }
        };
        let smooth_window = match kv.get_usize("smooth_window")? {
            0 => None,
            w => Some(w),
        };
        let trim = match kv.get("trim")? {
            "on" => Some(TrimSpec::new(kv.get_usize("trim.min_len")?, kv.get_usize("trim.max_len")?)?),
            "off" => None,
            other => {
                return Err(kv.parse_err("trim", format!("trim must be on/off, got {other:?}")))
            }
        };
        let preprocess = PreprocessConfig { filter, smooth_window, trim };

        let raw_means = kv.get("channel_means")?;
        let mut channel_means = Vec::new();
        for part in raw_means.split(',') {
            let v = part.trim().parse::<f64>().map_err(|_| {
                kv.parse_err("channel_means", format!("bad mean {part:?} in {raw_means:?}"))
            })?;
            channel_means.push(v);
        }
        if channel_means.len() != CHANNEL_COUNT {
            return Err(kv.parse_err(
                "channel_means",
                format!("expected {CHANNEL_COUNT} channel means, got {}", channel_means.len()),
            ));
        }

        let kind = kv.get("kind")?;
        let selected = match kind {
            "feature-knn" => {
                let path = dir.join(FEATURES_FILE);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::io(path.display().to_string(), e))?;
                let mut descriptors = Vec::new();
                for line in text.lines() {
                    let line = line.trim();
                    if line.is_empty() {
                        continue;
                    }
                    descriptors.push(FeatureDescriptor::parse(line)?);
                }
                if descriptors.is_empty() {
                    return Err(Error::invalid(format!(
                        "{}: feature list is empty",
                        path.display()
                    )));
                }
                Some(descriptors)
            }
            "series-knn" => None,
            other => {
                return Err(kv.parse_err("kind", format!("unknown pipeline kind {other:?}")))
            }
        };
        let scaling = match kv.get("scaling")? {
            "none" => FittedScaling::None,
            "quantile" => FittedScaling::Quantile(QuantileMap::load(&dir.join(SCALING_FILE))?),
            "standardize" => FittedScaling::Linear(LinearMap::load(&dir.join(SCALING_FILE))?),
            other => {
                return Err(kv.parse_err("scaling", format!("unknown scaling {other:?}")))
            }
        };
        let projection = match kv.get("projection")? {
            "on" => Some(LinearMap::load(&dir.join(PROJECTION_FILE))?),
            "off" => None,
            other => {
                return Err(
                    kv.parse_err("projection", format!("projection must be on/off, got {other:?}"))
                )
            }
        };
        let model = NeighborModel::load(&dir.join(MODEL_FILE))?;

        let alphabet = LabelAlphabet::new(case);
        if model.n_classes() != alphabet.len() {
            return Err(Error::invalid(format!(
                "model scores {} classes but the {} alphabet has {}",
                model.n_classes(),
                case.as_str(),
                alphabet.len()
            )));
        }
        let is_feature_model = matches!(model.metric(), Metric::Euclidean);
        if is_feature_model != selected.is_some() {
            return Err(Error::invalid(format!(
                "pipeline kind {kind:?} does not match the stored model's metric"
            )));
        }
        Ok(FittedPipeline { preprocess, alphabet, channel_means, selected, scaling, projection, model })
    }
}

// ---------------------------------------------------------------------------
// Hyper-parameter sweeps
// ---------------------------------------------------------------------------

/// Which knob a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    NSignificant,
    NComponents,
    K,
    BandRadius,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::NSignificant => "n_significant",
            SweepParam::NComponents => "n_components",
            SweepParam::K => "k",
            SweepParam::BandRadius => "band_radius",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "n_significant" => Ok(SweepParam::NSignificant),
            "n_components" => Ok(SweepParam::NComponents),
            "k" => Ok(SweepParam::K),
            "band_radius" => Ok(SweepParam::BandRadius),
            other => Err(Error::invalid(format!(
                "unknown sweep parameter {other:?} (expected n_significant, n_components, k or band_radius)"
            ))),
        }
    }
}

/// One grid point of a sweep.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub value: usize,
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    /// Selected-feature count of the first fold (feature route only).
    pub n_selected: Option<usize>,
}

/// Returns a copy of the config with the swept parameter set to `value`.
fn apply_sweep_value(
    cfg: &PipelineConfig,
    param: SweepParam,
    value: usize,
) -> Result<PipelineConfig> {
    let mut out = cfg.clone();
    match (param, &mut out.model) {
        (SweepParam::K, ModelSpec::FeatureKnn { k, .. })
        | (SweepParam::K, ModelSpec::SeriesKnn { k, .. }) => *k = value,
        (SweepParam::NSignificant, ModelSpec::FeatureKnn { .. }) => out.n_significant = value,
        (SweepParam::NSignificant, ModelSpec::SeriesKnn { .. }) => {
            return Err(Error::invalid(
                "n_significant only applies to the feature route",
            ))
        }
        (SweepParam::NComponents, ModelSpec::FeatureKnn { projection, .. }) => match projection {
            Projection::None => {
                return Err(Error::invalid(
                    "n_components sweep needs a projection stage in the base config",
                ))
            }
            Projection::Pca { n_components }
            | Projection::Lda { n_components }
            | Projection::Nca { n_components, .. } => *n_components = value,
        },
        (SweepParam::NComponents, ModelSpec::SeriesKnn { .. }) => {
            return Err(Error::invalid(
                "n_components only applies to the feature route",
            ))
        }
        (SweepParam::BandRadius, ModelSpec::SeriesKnn { band, .. }) => *band = Some(value),
        (SweepParam::BandRadius, ModelSpec::FeatureKnn { .. }) => {
            return Err(Error::invalid(
                "band_radius only applies to the elastic-distance route",
            ))
        }
    }
    Ok(out)
}

/// One fold, conditioned once so every grid point reuses the work that does
/// not depend on the swept parameter (conditioning, trimming and — on the
/// feature route — full-catalog extraction).
struct PreparedFold {
    train: Dataset,
    test: Dataset,
    train_classes: Vec<usize>,
    truth: Vec<usize>,
    /// Full-catalog matrices, feature route only.
    matrices: Option<(FeatureMatrix, FeatureMatrix)>,
}

fn prepare_fold(cfg: &PipelineConfig, train: &Dataset, test: &Dataset) -> Result<PreparedFold> {
    let (train_pp, _) = cfg.preprocess.prepare_training(train)?;
    let (test_pp, _) = cfg.preprocess.condition(test)?;
    let matrices = match cfg.model {
        ModelSpec::FeatureKnn { .. } => {
            let catalog = catalog_default();
            let train_fm = extract(&train_pp, &catalog)?;
            let test_fm = extract(&test_pp, &catalog)?;
            Some((train_fm, test_fm))
        }
        ModelSpec::SeriesKnn { .. } => None,
    };
    let train_classes = train_pp.class_indices();
    let truth = test_pp.class_indices();
    Ok(PreparedFold { train: train_pp, test: test_pp, train_classes, truth, matrices })
}

/// Accuracy of one grid point on one prepared fold.
fn run_prepared(cfg: &PipelineConfig, fold: &PreparedFold) -> Result<(f64, Option<usize>)> {
    match &cfg.model {
        ModelSpec::FeatureKnn { k, scaling, projection } => {
            let (train_fm, test_fm) =
                fold.matrices.as_ref().expect("feature route folds carry matrices");
            let stage = fit_feature_stage(
                train_fm,
                &fold.train_classes,
                &fold.train.alphabet,
                cfg.n_significant,
                cfg.fdr_q,
                *k,
                scaling,
                projection,
            )?;
            let probabilities = predict_feature_stage(&stage, test_fm)?;
            let predicted: Vec<usize> = probabilities.iter().map(|p| p.argmax()).collect();
            Ok((analysis::accuracy(&predicted, &fold.truth)?, Some(stage.selected.len())))
        }
        ModelSpec::SeriesKnn { k, mode, band, normalize } => {
            let model = knn_fit_series(
                &fold.train.samples,
                fold.train_classes.clone(),
                fold.train.alphabet.len(),
                *k,
                *mode,
                *band,
                *normalize,
            )?;
            let (probabilities, _widened) = model.predict_samples(&fold.test.samples)?;
            let predicted: Vec<usize> = probabilities.iter().map(|p| p.argmax()).collect();
            Ok((analysis::accuracy(&predicted, &fold.truth)?, None))
        }
    }
}

/// Evaluates the pipeline across a parameter grid on a set of train/test
/// folds. Grid points run in parallel, each with seed `base_seed + index`;
/// errors are reported with the offending grid value attached.
pub fn sweep(
    cfg: &PipelineConfig,
    param: SweepParam,
    grid: &[usize],
    folds: &[(Dataset, Dataset)],
    base_seed: u64,
) -> Result<Vec<SweepPoint>> {
    if grid.is_empty() {
        return Err(Error::invalid("sweep grid must not be empty"));
    }
    if folds.is_empty() {
        return Err(Error::invalid("sweep needs at least one train/test fold"));
    }
    // Reject invalid parameter/model combinations before doing any work.
    apply_sweep_value(cfg, param, grid[0])?;
    let prepared: Vec<PreparedFold> = folds
        .iter()
        .map(|(train, test)| prepare_fold(cfg, train, test))
        .collect::<Result<_>>()?;
    grid.par_iter()
        .enumerate()
        .map(|(index, &value)| {
            let run = || -> Result<SweepPoint> {
                let mut point_cfg = apply_sweep_value(cfg, param, value)?;
                point_cfg.seed = base_seed.wrapping_add(index as u64);
                let mut fold_accuracies = Vec::with_capacity(prepared.len());
                let mut n_selected = None;
                for fold in &prepared {
                    let (accuracy, selected) = run_prepared(&point_cfg, fold)?;
                    if n_selected.is_none() {
                        n_selected = selected;
                    }
                    fold_accuracies.push(accuracy);
                }
                let mean_accuracy =
                    fold_accuracies.iter().sum::<f64>() / fold_accuracies.len() as f64;
                Ok(SweepPoint { value, fold_accuracies, mean_accuracy, n_selected })
            };
            run().map_err(|e| {
                Error::invalid(format!("sweep point {} = {value}: {e}", param.as_str()))
            })
        })
        .collect()
}

/// Writes sweep results as a numeric CSV: value, mean accuracy, one column
/// per fold, and the selected-feature count when the sweep tracked one.
pub fn write_sweep_csv(points: &[SweepPoint], path: &Path) -> Result<()> {
    if points.is_empty() {
        return Err(Error::invalid("cannot write an empty sweep"));
    }
    let n_folds = points[0].fold_accuracies.len();
    if points.iter().any(|p| p.fold_accuracies.len() != n_folds) {
        return Err(Error::invalid("sweep points disagree on the fold count"));
    }
    let with_selected = points.iter().all(|p| p.n_selected.is_some());
    let mut headers = vec!["value".to_string(), "mean_accuracy".to_string()];
    for i in 0..n_folds {
        headers.push(format!("fold_{i}"));
    }
    if with_selected {
        headers.push("n_selected".to_string());
    }
    let rows: Vec<Vec<f64>> = points
        .iter()
        .map(|p| {
            let mut row = vec![p.value as f64, p.mean_accuracy];
            row.extend(&p.fold_accuracies);
            if with_selected {
                row.push(p.n_selected.expect("checked above") as f64);
            }
            row
        })
        .collect();
    let matrix = crate::io::Matrix::new(headers, rows)?;
    crate::io::write_matrix(&matrix, path)
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

/// Sampling rate the synthetic generator pretends to record at.
pub const SYNTHETIC_SAMPLING_HZ: f64 = 200.0;
/// Oscillation frequency (Hz) of each synthetic class.
pub const SYNTHETIC_CLASS_FREQS_HZ: [f64; 3] = [2.0, 5.0, 11.0];

/// Parameters of the synthetic three-class generator.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    /// Total samples, spread round-robin over the three classes.
    pub n_samples: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec { n_samples: 300, min_len: 60, max_len: 110, noise: 0.2, seed: 7 }
    }
}

/// Standard normal draw (Box-Muller).
fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 1e-300 {
            let v: f64 = rng.random();
            return (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos();
        }
    }
}

/// Generates a labelled three-class dataset whose classes differ in the
/// frequency of the motion signal: the six accelerometer channels carry a
/// class-frequency sine (plus a gravity-like offset on the two z-axes), the
/// three gyroscope channels its quadrature, while magnetometer and force
/// channels carry class-independent content. Lengths, phases and amplitudes
/// vary per sample.
pub fn synthetic_frequency_dataset(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.n_samples < 3 {
        return Err(Error::invalid("need at least one sample per class"));
    }
    if spec.min_len < 2 || spec.min_len > spec.max_len {
        return Err(Error::invalid(format!(
            "bad length range [{}, {}]",
            spec.min_len, spec.max_len
        )));
    }
    if !(spec.noise.is_finite() && spec.noise >= 0.0) {
        return Err(Error::invalid(format!("noise must be non-negative, got {}", spec.noise)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let fs = SYNTHETIC_SAMPLING_HZ;
    let mut samples = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let class = i % 3;
        let freq = SYNTHETIC_CLASS_FREQS_HZ[class];
        let label = (b'a' + class as u8) as char;
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let phase = rng.random::<f64>() * std::f64::consts::TAU;
        let accel_amp = 0.8 + 0.4 * rng.random::<f64>();
        let gyro_amp = 0.8 + 0.4 * rng.random::<f64>();
        let mut values: Vec<Vec<f64>> = Vec::with_capacity(CHANNEL_COUNT);
        for c in 0..CHANNEL_COUNT {
            let jitter = 0.2 * (rng.random::<f64>() - 0.5);
            let bias = 0.6 * (rng.random::<f64>() - 0.5);
            let mut channel = Vec::with_capacity(len);
            for t in 0..len {
                let tau = std::f64::consts::TAU * t as f64 / fs;
                let clean = match c {
                    // Accelerometers: class-frequency sine; z-axes sit on a
                    // gravity-like constant the high-pass stage removes.
                    0..=5 => {
                        let gravity = if c == 2 || c == 5 { 9.81 } else { 0.0 };
                        accel_amp * (freq * tau + phase + jitter).sin() + gravity + bias
                    }
                    // Gyroscopes: quadrature of the same motion.
                    6..=8 => gyro_amp * (freq * tau + phase + jitter).cos(),
                    // Magnetometers: class-independent bias plus noise.
                    9..=11 => 0.3 * bias,
                    // Force: steady class-independent grip.
                    _ => 0.9 + 0.1 * bias,
                };
                channel.push(clean + spec.noise * gauss(&mut rng));
            }
            values.push(channel);
        }
        samples.push(Sample::from_values(format!("syn{i:04}"), label, None, values)?);
    }
    let alphabet = LabelAlphabet::new(CaseMode::Lower);
    let split = SplitSpec::new(0, crate::data::Dependency::WriterIndependent, Role::Train)?;
    Dataset::new(samples, alphabet, split)
}

/// Splits a dataset into train/test sides with per-class proportions
/// preserved; every class keeps at least one sample on each side. Sample
/// order within each side follows the input dataset.
pub fn stratified_split(
    ds: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "test fraction must lie strictly between 0 and 1, got {test_fraction}"
        )));
    }
    let mut by_class: BTreeMap<char, Vec<usize>> = BTreeMap::new();
    for (i, s) in ds.samples.iter().enumerate() {
        by_class.entry(s.label).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_indices = Vec::new();
    for (label, mut indices) in by_class {
        if indices.len() < 2 {
            return Err(Error::invalid(format!(
                "class {label:?} has only {} sample(s); cannot keep both sides non-empty",
                indices.len()
            )));
        }
        indices.shuffle(&mut rng);
        let n = indices.len();
        let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
        test_indices.extend(indices.into_iter().take(n_test));
    }
    let test_set: std::collections::HashSet<usize> = test_indices.into_iter().collect();
    let mut train_samples = Vec::new();
    let mut test_samples = Vec::new();
    for (i, s) in ds.samples.iter().enumerate() {
        if test_set.contains(&i) {
            test_samples.push(s.clone());
        } else {
            train_samples.push(s.clone());
        }
    }
    let train_split = SplitSpec::new(ds.split.fold, ds.split.dependency, Role::Train)?;
    let test_split = SplitSpec::new(ds.split.fold, ds.split.dependency, Role::Test)?;
    Ok((
        Dataset::new(train_samples, ds.alphabet.clone(), train_split)?,
        Dataset::new(test_samples, ds.alphabet.clone(), test_split)?,
    ))
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::validate_dataset;

    fn small_spec(n: usize, seed: u64) -> SyntheticSpec {
        SyntheticSpec { n_samples: n, seed, ..Default::default() }
    }

    #[test]
    fn synthetic_dataset_is_valid_balanced_and_deterministic() {
        let ds = synthetic_frequency_dataset(&small_spec(30, 1)).unwrap();
        assert_eq!(ds.len(), 30);
        assert!(validate_dataset(&ds).is_empty());
        for label in ['a', 'b', 'c'] {
            assert_eq!(ds.samples.iter().filter(|s| s.label == label).count(), 10);
        }
        for s in &ds.samples {
            assert!(s.len() >= 60 && s.len() <= 110);
            assert_eq!(s.channels().len(), CHANNEL_COUNT);
        }
        let again = synthetic_frequency_dataset(&small_spec(30, 1)).unwrap();
        assert_eq!(ds.samples, again.samples, "same seed, same dataset");
        let other = synthetic_frequency_dataset(&small_spec(30, 2)).unwrap();
        assert_ne!(ds.samples, other.samples, "different seed, different dataset");
    }

    #[test]
    fn synthetic_classes_differ_in_dominant_frequency() {
        // Count mean-crossings of an accelerometer channel: the 11 Hz class
        // must cross more often than the 2 Hz class on every sample pair.
        let ds = synthetic_frequency_dataset(&SyntheticSpec {
            n_samples: 30,
            noise: 0.05,
            ..Default::default()
        })
        .unwrap();
        let crossings_per_step = |s: &Sample| {
            let v = s.channel(0);
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let c = v.windows(2).filter(|w| (w[0] - mean) * (w[1] - mean) < 0.0).count();
            c as f64 / v.len() as f64
        };
        let rate = |label: char| {
            let rates: Vec<f64> = ds
                .samples
                .iter()
                .filter(|s| s.label == label)
                .map(crossings_per_step)
                .collect();
            rates.iter().sum::<f64>() / rates.len() as f64
        };
        assert!(rate('a') < rate('b'), "2 Hz crosses less than 5 Hz");
        assert!(rate('b') < rate('c'), "5 Hz crosses less than 11 Hz");
    }

    #[test]
    fn stratified_split_preserves_classes_and_order() {
        let ds = synthetic_frequency_dataset(&small_spec(60, 3)).unwrap();
        let (train, test) = stratified_split(&ds, 0.25, 11).unwrap();
        assert_eq!(train.len() + test.len(), 60);
        assert_eq!(test.len(), 15);
        for label in ['a', 'b', 'c'] {
            assert_eq!(test.samples.iter().filter(|s| s.label == label).count(), 5);
            assert_eq!(train.samples.iter().filter(|s| s.label == label).count(), 15);
        }
        assert_eq!(train.split.role, Role::Train);
        assert_eq!(test.split.role, Role::Test);
        // No sample on both sides, none lost.
        let mut ids: Vec<&str> = train
            .samples
            .iter()
            .chain(&test.samples)
            .map(|s| s.id.as_str())
            .collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 60);
        // Original order within each side.
        for side in [&train, &test] {
            let positions: Vec<usize> = side
                .samples
                .iter()
                .map(|s| s.id.trim_start_matches("syn").parse::<usize>().unwrap())
                .collect();
            assert!(positions.windows(2).all(|w| w[0] < w[1]));
        }
        // Deterministic per seed.
        let (train2, _) = stratified_split(&ds, 0.25, 11).unwrap();
        assert_eq!(train.samples, train2.samples);
        let (train3, _) = stratified_split(&ds, 0.25, 12).unwrap();
        assert_ne!(train.samples, train3.samples);
    }

    #[test]
    fn stratified_split_rejects_bad_fractions() {
        let ds = synthetic_frequency_dataset(&small_spec(12, 3)).unwrap();
        assert!(stratified_split(&ds, 0.0, 1).is_err());
        assert!(stratified_split(&ds, 1.0, 1).is_err());
    }

    fn feature_cfg(n_significant: usize) -> PipelineConfig {
        PipelineConfig {
            n_significant,
            model: ModelSpec::FeatureKnn {
                k: 5,
                scaling: Scaling::Quantile { n_quantiles: 100 },
                projection: Projection::None,
            },
            ..Default::default()
        }
    }

    fn series_cfg(k: usize, band: Option<usize>) -> PipelineConfig {
        PipelineConfig {
            model: ModelSpec::SeriesKnn {
                k,
                mode: DtwMode::Dependent,
                band,
                normalize: true,
            },
            ..Default::default()
        }
    }

    #[test]
    fn feature_route_separates_synthetic_classes() {
        let ds = synthetic_frequency_dataset(&small_spec(120, 5)).unwrap();
        let (train, test) = stratified_split(&ds, 0.25, 5).unwrap();
        let outcome = run_pipeline(&train, &test, &feature_cfg(2)).unwrap();
        assert!(
            outcome.accuracy >= 0.85,
            "feature route should separate frequencies, got {}",
            outcome.accuracy
        );
        assert!(outcome.n_selected.unwrap() > 0);
        assert_eq!(outcome.predicted.len(), test.len());
        assert_eq!(outcome.truth, test.class_indices());
    }

    #[test]
    fn series_route_separates_synthetic_classes() {
        let ds = synthetic_frequency_dataset(&small_spec(60, 6)).unwrap();
        let (train, test) = stratified_split(&ds, 0.25, 6).unwrap();
        let outcome = run_pipeline(&train, &test, &series_cfg(5, None)).unwrap();
        assert!(
            outcome.accuracy >= 0.85,
            "elastic route should separate frequencies, got {}",
            outcome.accuracy
        );
        assert!(outcome.n_selected.is_none());
    }

    #[test]
    fn fitted_pipeline_roundtrips_through_directory() {
        let ds = synthetic_frequency_dataset(&small_spec(60, 8)).unwrap();
        let (train, test) = stratified_split(&ds, 0.3, 8).unwrap();

        // Feature route with standardize + metric learning on 2 components.
        let cfg = PipelineConfig {
            n_significant: 2,
            model: ModelSpec::FeatureKnn {
                k: 5,
                scaling: Scaling::Standardize,
                projection: Projection::Nca {
                    n_components: 2,
                    options: NcaOptions { max_iter: 30, ..Default::default() },
                },
            },
            ..Default::default()
        };
        let (fitted, report) = fit_pipeline(&train, &cfg).unwrap();
        assert!(report.nca.is_some());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feature_model");
        fitted.save(&path).unwrap();
        let loaded = FittedPipeline::load(&path).unwrap();
        assert_eq!(loaded.channel_means, fitted.channel_means, "means survive bit-for-bit");
        let before = fitted.predict_dataset(&test).unwrap();
        let after = loaded.predict_dataset(&test).unwrap();
        assert_eq!(before.probabilities, after.probabilities, "bit-identical predictions");

        // Series route with a band and trimming in the recipe.
        let cfg = PipelineConfig {
            preprocess: PreprocessConfig {
                trim: Some(TrimSpec::new(2, 105).unwrap()),
                ..Default::default()
            },
            ..series_cfg(3, Some(10))
        };
        let (fitted, _) = fit_pipeline(&train, &cfg).unwrap();
        let path = dir.path().join("series_model");
        fitted.save(&path).unwrap();
        let loaded = FittedPipeline::load(&path).unwrap();
        assert_eq!(loaded.preprocess, fitted.preprocess);
        let before = fitted.predict_dataset(&test).unwrap();
        let after = loaded.predict_dataset(&test).unwrap();
        assert_eq!(before.probabilities, after.probabilities);
        assert_eq!(before.band_widened, after.band_widened);
    }

    #[test]
    fn pipeline_load_rejects_mismatched_kind() {
        let ds = synthetic_frequency_dataset(&small_spec(30, 9)).unwrap();
        let (fitted, _) = fit_pipeline(&ds, &series_cfg(3, None)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model");
        fitted.save(&path).unwrap();
        // Corrupt the descriptor: claim the feature route.
        let desc = path.join(PIPELINE_FILE);
        let text = std::fs::read_to_string(&desc).unwrap();
        std::fs::write(&desc, text.replace("kind = series-knn", "kind = feature-knn")).unwrap();
        // Feature route wants a feature list that does not exist.
        assert!(FittedPipeline::load(&path).is_err());
    }

    #[test]
    fn sweep_grid_of_one_matches_direct_run() {
        let ds = synthetic_frequency_dataset(&small_spec(60, 10)).unwrap();
        let (train, test) = stratified_split(&ds, 0.25, 10).unwrap();
        let cfg = feature_cfg(2);
        let folds = vec![(train.clone(), test.clone())];
        let points = sweep(&cfg, SweepParam::NSignificant, &[2], &folds, 0).unwrap();
        assert_eq!(points.len(), 1);
        let direct = run_pipeline(&train, &test, &cfg).unwrap();
        assert_eq!(points[0].value, 2);
        assert_eq!(points[0].mean_accuracy, direct.accuracy, "sweep path = direct path");
        assert_eq!(points[0].n_selected, direct.n_selected);
    }

    #[test]
    fn sweep_selected_count_never_increases_with_n_significant() {
        let ds = synthetic_frequency_dataset(&small_spec(60, 11)).unwrap();
        let (train, test) = stratified_split(&ds, 0.25, 11).unwrap();
        let folds = vec![(train, test)];
        let points = sweep(&feature_cfg(1), SweepParam::NSignificant, &[1, 2], &folds, 0).unwrap();
        let counts: Vec<usize> = points.iter().map(|p| p.n_selected.unwrap()).collect();
        assert!(
            counts.windows(2).all(|w| w[0] >= w[1]),
            "selected features must not grow with a stricter n_significant: {counts:?}"
        );
    }

    #[test]
    fn degenerate_k_collapses_to_majority_vote() {
        // With k = n_train every vote includes all references, so accuracy at
        // a sensible k must be at least the all-references accuracy.
        let ds = synthetic_frequency_dataset(&small_spec(60, 12)).unwrap();
        let (train, test) = stratified_split(&ds, 0.25, 12).unwrap();
        let n_train = train.len();
        let folds = vec![(train, test)];
        let points = sweep(&feature_cfg(2), SweepParam::K, &[5, n_train], &folds, 0).unwrap();
        assert!(
            points[0].mean_accuracy >= points[1].mean_accuracy,
            "k=5 ({}) must beat the degenerate k={} ({})",
            points[0].mean_accuracy,
            n_train,
            points[1].mean_accuracy
        );
        // The degenerate model votes with every reference on every query:
        // every test sample gets the same majority-class prediction, so its
        // accuracy equals the majority share of the (balanced) test truth.
        assert!(points[1].mean_accuracy <= 0.40);
    }

    #[test]
    fn sweep_rejects_mismatched_parameter_and_route() {
        let ds = synthetic_frequency_dataset(&small_spec(30, 13)).unwrap();
        let (train, test) = stratified_split(&ds, 0.3, 13).unwrap();
        let folds = vec![(train, test)];
        let bad = sweep(&feature_cfg(2), SweepParam::BandRadius, &[3], &folds, 0);
        assert!(bad.is_err());
        let bad = sweep(&series_cfg(3, None), SweepParam::NSignificant, &[2], &folds, 0);
        assert!(bad.is_err());
        let bad = sweep(&feature_cfg(2), SweepParam::NComponents, &[2], &folds, 0);
        assert!(bad.is_err(), "n_components needs a projection stage");
        assert!(sweep(&feature_cfg(2), SweepParam::NSignificant, &[], &folds, 0).is_err());
        assert!(sweep(&feature_cfg(2), SweepParam::NSignificant, &[1], &[], 0).is_err());
    }

    #[test]
    fn sweep_errors_name_the_offending_grid_value() {
        let ds = synthetic_frequency_dataset(&small_spec(60, 14)).unwrap();
        let (train, test) = stratified_split(&ds, 0.25, 14).unwrap();
        let folds = vec![(train, test)];
        // n_significant = 20 keeps nothing on a 3-class dataset, 2 works.
        let err = sweep(&feature_cfg(2), SweepParam::NSignificant, &[2, 20], &folds, 0)
            .unwrap_err()
            .to_string();
        assert!(err.contains("n_significant = 20"), "error was: {err}");
    }

    #[test]
    fn sweep_csv_roundtrips_through_matrix_format() {
        let points = vec![
            SweepPoint {
                value: 1,
                fold_accuracies: vec![0.5, 0.7],
                mean_accuracy: 0.6,
                n_selected: Some(40),
            },
            SweepPoint {
                value: 5,
                fold_accuracies: vec![0.9, 0.8],
                mean_accuracy: 0.85,
                n_selected: Some(12),
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.csv");
        write_sweep_csv(&points, &path).unwrap();
        let matrix = crate::io::read_matrix(&path).unwrap();
        assert_eq!(
            matrix.headers,
            vec!["value", "mean_accuracy", "fold_0", "fold_1", "n_selected"]
        );
        assert_eq!(matrix.rows[0], vec![1.0, 0.6, 0.5, 0.7, 40.0]);
        assert_eq!(matrix.rows[1], vec![5.0, 0.85, 0.9, 0.8, 12.0]);
    }

    #[test]
    fn trimming_only_touches_the_training_side() {
        let ds = synthetic_frequency_dataset(&small_spec(60, 15)).unwrap();
        let (train, test) = stratified_split(&ds, 0.25, 15).unwrap();
        // Bounds that cut some training samples but keep every class alive.
        let cfg = PipelineConfig {
            preprocess: PreprocessConfig {
                trim: Some(TrimSpec::new(2, 100).unwrap()),
                ..Default::default()
            },
            ..feature_cfg(2)
        };
        let n_long_train = train.samples.iter().filter(|s| s.len() > 100).count();
        assert!(n_long_train > 0, "test premise: some training samples exceed the bound");
        let (fitted, report) = fit_pipeline(&train, &cfg).unwrap();
        assert_eq!(report.n_train_used, train.len() - n_long_train);
        assert_eq!(
            report.warnings.iter().filter(|w| w.starts_with("trimmed sample")).count(),
            n_long_train
        );
        // Prediction scores every test sample, long ones included.
        let out = fitted.predict_dataset(&test).unwrap();
        assert_eq!(out.probabilities.len(), test.len());
    }

    #[test]
    fn single_sample_predictions_match_batch_predictions() {
        let ds = synthetic_frequency_dataset(&small_spec(45, 17)).unwrap();
        let (train, test) = stratified_split(&ds, 0.3, 17).unwrap();
        for cfg in [feature_cfg(2), series_cfg(3, Some(10))] {
            let (fitted, _) = fit_pipeline(&train, &cfg).unwrap();
            let batch = fitted.predict_dataset(&test).unwrap();
            let (conditioned, _) = fitted.preprocess.condition(&test).unwrap();
            for (sample, expected) in conditioned.samples.iter().zip(&batch.probabilities) {
                let single = fitted.predict_conditioned_sample(sample).unwrap();
                assert_eq!(&single, expected, "sample {}", sample.id);
            }
        }
    }

    #[test]
    fn predict_rejects_case_mismatch() {
        let ds = synthetic_frequency_dataset(&small_spec(30, 16)).unwrap();
        let (fitted, _) = fit_pipeline(&ds, &feature_cfg(2)).unwrap();
        let upper_samples: Vec<Sample> = ds
            .samples
            .iter()
            .map(|s| {
                let values = s.channels().iter().map(|c| c.values.clone()).collect();
                Sample::from_values(s.id.clone(), s.label.to_ascii_uppercase(), None, values)
                    .unwrap()
            })
            .collect();
        let upper = Dataset::new(upper_samples, LabelAlphabet::new(CaseMode::Upper), ds.split)
            .unwrap();
        assert!(fitted.predict_dataset(&upper).is_err());
    }
}
