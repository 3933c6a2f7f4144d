//! Implementations of the `mtsc` subcommands.
//!
//! Every command reads its inputs through the run context so the manifest
//! ends up with a digest of everything the run depended on, writes its
//! outputs into the run directory, and reports progress on stderr.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use mtsc_core::data::{
    compute_subset_stats, CaseMode, Dataset, Dependency, LabelAlphabet, Role, SplitSpec,
    CHANNEL_COUNT,
};
use mtsc_core::ensemble::{
    load_prediction_matrix, plurality_vote, save_prediction_matrix, soft_vote,
    weighted_soft_vote, weighted_vote, PredictionMatrix, Scheme, Tier, TierWeights, VoteOutcome,
};
use mtsc_core::features::{self, catalog_default, read_feature_matrix, write_feature_matrix};
use mtsc_core::io::{self, fmt_g17, Matrix};
use mtsc_core::pipeline::{
    fit_pipeline, write_sweep_csv, FittedPipeline, ModelSpec, PipelineConfig, PreprocessConfig,
    Projection, Scaling, SweepParam,
};
use mtsc_core::preprocess::{FilterSpec, TrimSpec};
use mtsc_core::selection::{read_selection, select_features, write_selection};
use mtsc_core::transforms::{
    fit_lda, fit_nca, fit_pca, fit_quantile, fit_standardize, LinearMap, NcaOptions,
};
use mtsc_core::{analysis, classifiers, explain, pipeline, Error, Result};

use crate::config::Config;
use crate::log;
use crate::manifest::Ctx;

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

pub fn split_spec(fold: u8, dependency: &str, role: &str) -> Result<SplitSpec> {
    let dependency = Dependency::parse(dependency)?;
    let role = match role {
        "train" => Role::Train,
        "test" => Role::Test,
        other => {
            return Err(Error::invalid(format!(
                "unknown role {other:?} (expected train/test)"
            )))
        }
    };
    SplitSpec::new(fold, dependency, role)
}

fn read_input_dataset(
    ctx: &mut Ctx,
    path: &Path,
    split: SplitSpec,
    case: Option<&str>,
) -> Result<Dataset> {
    ctx.record_input(path)?;
    match case {
        Some(c) => io::read_dataset_as(path, split, CaseMode::parse(c)?),
        None => io::read_dataset(path, split),
    }
}

fn parse_usize_list(raw: &str, what: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::invalid(format!("{what} must list integers, got {t:?}")))
        })
        .collect()
}

/// Preprocessing stage described by the `preprocess.*` config keys.
pub fn preprocess_config(config: &Config) -> Result<PreprocessConfig> {
    let defaults = PreprocessConfig::default();
    let filter = if config.get_switch("preprocess.filter", true)? {
        let cutoff_hz = config.get_f64("preprocess.cutoff_hz", 1.0)?;
        let sampling_hz = config.get_f64("preprocess.sampling_hz", 200.0)?;
        let order = config.get_usize("preprocess.order", 2)?;
        let targets = match config.get_str("preprocess.targets") {
            Some(raw) => parse_usize_list(raw, "config preprocess.targets")?,
            None => FilterSpec::accelerometer_targets(),
        };
        Some(FilterSpec::new(cutoff_hz, sampling_hz, order, targets)?)
    } else {
        None
    };
    let window = config.get_usize(
        "preprocess.smooth_window",
        defaults.smooth_window.unwrap_or(0),
    )?;
    let smooth_window = if window == 0 { None } else { Some(window) };
    let trim = if config.get_switch("preprocess.trim", false)? {
        let min_len = config.get_usize("preprocess.trim_min", 1)?;
        let max_len = config.get_usize("preprocess.trim_max", usize::MAX)?;
        Some(TrimSpec::new(min_len, max_len)?)
    } else {
        None
    };
    Ok(PreprocessConfig {
        filter,
        smooth_window,
        trim,
    })
}

fn scaling_spec(config: &Config) -> Result<Scaling> {
    match config.get_str("model.scaling").unwrap_or("quantile") {
        "none" => Ok(Scaling::None),
        "quantile" => Ok(Scaling::Quantile {
            n_quantiles: config.get_usize("model.n_quantiles", 1000)?,
        }),
        "standardize" => Ok(Scaling::Standardize),
        other => Err(Error::invalid(format!(
            "config model.scaling must be none, quantile or standardize, got {other:?}"
        ))),
    }
}

fn nca_options(config: &Config) -> Result<NcaOptions> {
    let defaults = NcaOptions::default();
    Ok(NcaOptions {
        max_iter: config.get_usize("nca.max_iter", defaults.max_iter)?,
        tol: config.get_f64("nca.tol", defaults.tol)?,
        base_step: config.get_f64("nca.base_step", defaults.base_step)?,
    })
}

fn projection_spec(config: &Config) -> Result<Projection> {
    let n_components = config.get_usize("model.n_components", 20)?;
    match config.get_str("model.projection").unwrap_or("none") {
        "none" => Ok(Projection::None),
        "pca" => Ok(Projection::Pca { n_components }),
        "lda" => Ok(Projection::Lda { n_components }),
        "nca" => Ok(Projection::Nca {
            n_components,
            options: nca_options(config)?,
        }),
        other => Err(Error::invalid(format!(
            "config model.projection must be none, pca, lda or nca, got {other:?}"
        ))),
    }
}

fn model_spec(config: &Config) -> Result<ModelSpec> {
    let k = config.get_usize("model.k", 5)?;
    match config.get_str("model.kind").unwrap_or("feature-knn") {
        "feature-knn" => Ok(ModelSpec::FeatureKnn {
            k,
            scaling: scaling_spec(config)?,
            projection: projection_spec(config)?,
        }),
        "series-knn" => {
            let mode = match config.get_str("model.mode").unwrap_or("dependent") {
                "dependent" => classifiers::DtwMode::Dependent,
                "independent" => classifiers::DtwMode::Independent,
                other => {
                    return Err(Error::invalid(format!(
                        "config model.mode must be dependent or independent, got {other:?}"
                    )))
                }
            };
            let band = match config.get_str("model.band") {
                None | Some("off") => None,
                Some(raw) => Some(raw.parse::<usize>().map_err(|_| {
                    Error::invalid(format!(
                        "config model.band must be off or a radius, got {raw:?}"
                    ))
                })?),
            };
            let normalize = config.get_switch("model.normalize", true)?;
            Ok(ModelSpec::SeriesKnn {
                k,
                mode,
                band,
                normalize,
            })
        }
        other => Err(Error::invalid(format!(
            "config model.kind must be feature-knn or series-knn, got {other:?}"
        ))),
    }
}

/// Complete pipeline configuration from the resolved config map.
pub fn pipeline_config(config: &Config) -> Result<PipelineConfig> {
    Ok(PipelineConfig {
        preprocess: preprocess_config(config)?,
        n_significant: config.get_usize("select.n_significant", 17)?,
        fdr_q: config.get_f64("select.fdr_q", 0.05)?,
        model: model_spec(config)?,
        seed: config.get_u64("run.seed", 0)?,
    })
}

fn alphabet_for(labels: &[char], case: Option<&str>) -> Result<LabelAlphabet> {
    match case {
        Some(c) => Ok(LabelAlphabet::new(CaseMode::parse(c)?)),
        None => LabelAlphabet::infer(labels.iter().copied()),
    }
}

/// True class index per prediction-matrix sample, read from a labels file.
fn truth_indices(pm: &PredictionMatrix, path: &Path) -> Result<Vec<usize>> {
    let pairs = io::read_labels(path)?;
    let map: BTreeMap<String, char> = pairs.into_iter().collect();
    pm.sample_ids()
        .iter()
        .map(|id| {
            let &label = map
                .get(id)
                .ok_or_else(|| Error::invalid(format!("labels file has no entry for sample '{id}'")))?;
            pm.symbols().iter().position(|&s| s == label).ok_or_else(|| {
                Error::invalid(format!(
                    "label '{label}' of sample '{id}' is not among the prediction classes"
                ))
            })
        })
        .collect()
}

/// `(model_id, accuracy)` in descending accuracy; ties keep matrix order.
fn rank_models(pm: &PredictionMatrix, truth: &[usize]) -> Result<Vec<(String, f64)>> {
    let mut ranked: Vec<(String, f64)> = Vec::with_capacity(pm.n_models());
    for (m, id) in pm.model_ids().iter().enumerate() {
        let acc = analysis::accuracy(&pm.argmax_labels(m), truth)?;
        ranked.push((id.clone(), acc));
    }
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("accuracies are finite"));
    Ok(ranked)
}

fn write_text(ctx: &mut Ctx, name: &str, text: &str) -> Result<()> {
    let path = ctx.out_path(name);
    std::fs::write(&path, text.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    ctx.record_output(name);
    Ok(())
}

// ---------------------------------------------------------------------------
// import / preprocess / stats / extract
// ---------------------------------------------------------------------------

pub fn import(
    ctx: &mut Ctx,
    config: &Config,
    data: &Path,
    fold: u8,
    dependency: &str,
    role: &str,
    case: Option<&str>,
) -> Result<()> {
    let split = split_spec(fold, dependency, role)?;
    ctx.record_input(data)?;
    let mut import_config = io::ImportConfig::default();
    if let Some(field) = config.get_str("import.id_field") {
        import_config.id_field = field.to_string();
    }
    if let Some(field) = config.get_str("import.label_field") {
        import_config.label_field = field.to_string();
    }
    if let Some(field) = config.get_str("import.writer_field") {
        import_config.writer_field = if field == "off" {
            None
        } else {
            Some(field.to_string())
        };
    }
    if let Some(raw) = config.get_str("import.channel_fields") {
        import_config.channel_fields = raw.split(',').map(|s| s.trim().to_string()).collect();
    }
    if let Some(c) = case {
        import_config.case = Some(CaseMode::parse(c)?);
    }
    let ds = io::import_raw(&import_config, data, split)?;
    io::write_dataset(&ds, &ctx.out_path("dataset.mtsl"))?;
    ctx.record_output("dataset.mtsl");
    let classes: BTreeSet<char> = ds.samples.iter().map(|s| s.label).collect();
    log(
        "info",
        "import",
        &format!(
            "{} samples, {} distinct classes, {} alphabet",
            ds.samples.len(),
            classes.len(),
            ds.alphabet.case_mode().as_str()
        ),
    );
    println!(
        "imported {} samples into {}",
        ds.samples.len(),
        ctx.out_path("dataset.mtsl").display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn preprocess(
    ctx: &mut Ctx,
    config: &Config,
    data: &Path,
    fold: u8,
    dependency: &str,
    role: &str,
    case: Option<&str>,
    for_training: bool,
) -> Result<()> {
    let split = split_spec(fold, dependency, role)?;
    let ds = read_input_dataset(ctx, data, split, case)?;
    let recipe = preprocess_config(config)?;
    let (conditioned, warnings) = if for_training {
        recipe.prepare_training(&ds)?
    } else {
        recipe.condition(&ds)?
    };
    for w in &warnings {
        log("warn", "preprocess", w);
    }
    io::write_dataset(&conditioned, &ctx.out_path("conditioned.mtsl"))?;
    ctx.record_output("conditioned.mtsl");
    println!(
        "conditioned {} of {} samples into {}",
        conditioned.samples.len(),
        ds.samples.len(),
        ctx.out_path("conditioned.mtsl").display()
    );
    Ok(())
}

pub fn stats(
    ctx: &mut Ctx,
    data: &Path,
    fold: u8,
    dependency: &str,
    role: &str,
    case: Option<&str>,
) -> Result<()> {
    let split = split_spec(fold, dependency, role)?;
    let ds = read_input_dataset(ctx, data, split, case)?;
    let st = compute_subset_stats(&ds.samples)?;
    let text = format!(
        "n_samples = {}\nmean_len = {}\nstd_len = {}\nmin_len = {}\nmax_len = {}\n",
        st.n_samples,
        fmt_g17(st.mean_len),
        fmt_g17(st.std_len),
        st.min_len,
        st.max_len
    );
    print!("{text}");
    write_text(ctx, "stats.txt", &text)?;
    Ok(())
}

pub fn extract(
    ctx: &mut Ctx,
    data: &Path,
    fold: u8,
    dependency: &str,
    role: &str,
    case: Option<&str>,
) -> Result<()> {
    let split = split_spec(fold, dependency, role)?;
    let ds = read_input_dataset(ctx, data, split, case)?;
    let catalog = catalog_default();
    let fm = features::extract(&ds, &catalog)?;
    write_feature_matrix(&fm, &ctx.out_path("features.csv"))?;
    ctx.record_output("features.csv");
    println!(
        "extracted {} features x {} samples into {}",
        fm.descriptors.len(),
        fm.sample_ids.len(),
        ctx.out_path("features.csv").display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// select / transform
// ---------------------------------------------------------------------------

pub fn select(ctx: &mut Ctx, config: &Config, features: &Path, case: Option<&str>) -> Result<()> {
    ctx.record_input(features)?;
    let fm = read_feature_matrix(features)?;
    let alphabet = alphabet_for(&fm.labels, case)?;
    let n_significant = config.get_usize("select.n_significant", 17)?;
    let fdr_q = config.get_f64("select.fdr_q", 0.05)?;
    let result = select_features(&fm, &alphabet, n_significant, fdr_q)?;
    write_selection(&result, &ctx.out_path("selection.txt"))?;
    ctx.record_output("selection.txt");
    println!(
        "selected {} of {} features (n_significant = {n_significant}, fdr_q = {fdr_q})",
        result.selected_indices.len(),
        result.descriptors.len()
    );
    Ok(())
}

/// Fitted-on-train scaling stage used by the standalone `transform` command.
enum ScalingStage {
    None,
    Quantile(mtsc_core::transforms::QuantileMap),
    Standardize(LinearMap),
}

impl ScalingStage {
    fn apply(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        match self {
            ScalingStage::None => Ok(rows.to_vec()),
            ScalingStage::Quantile(map) => map.apply(rows),
            ScalingStage::Standardize(map) => map.apply(rows),
        }
    }
}

pub fn transform(
    ctx: &mut Ctx,
    config: &Config,
    train: &Path,
    apply: &[PathBuf],
    selection: Option<&Path>,
    case: Option<&str>,
) -> Result<()> {
    ctx.record_input(train)?;
    let mut train_fm = read_feature_matrix(train)?;
    let descriptors = match selection {
        Some(path) => {
            ctx.record_input(path)?;
            let sel = read_selection(path)?;
            let descriptors = sel.descriptors();
            train_fm = mtsc_core::selection::project(&train_fm, &descriptors)?;
            Some(descriptors)
        }
        None => None,
    };

    let scaling_cfg = scaling_spec(config)?;
    let projection_cfg = projection_spec(config)?;
    if scaling_cfg == Scaling::None && projection_cfg == Projection::None {
        return Err(Error::invalid(
            "transform has nothing to do: configure model.scaling and/or model.projection",
        ));
    }

    let stage = match scaling_cfg {
        Scaling::None => ScalingStage::None,
        Scaling::Quantile { n_quantiles } => {
            let map = fit_quantile(&train_fm.values, n_quantiles)?;
            map.save(&ctx.out_path("scaling.txt"))?;
            ctx.record_output("scaling.txt");
            ScalingStage::Quantile(map)
        }
        Scaling::Standardize => {
            let map = fit_standardize(&train_fm.values)?;
            map.save(&ctx.out_path("scaling.txt"))?;
            ctx.record_output("scaling.txt");
            ScalingStage::Standardize(map)
        }
    };
    let scaled_train = stage.apply(&train_fm.values)?;

    let projection = match &projection_cfg {
        Projection::None => None,
        Projection::Pca { n_components } => {
            let (map, info) = fit_pca(&scaled_train, *n_components)?;
            log(
                "info",
                "transform",
                &format!(
                    "pca keeps {} of the variance in {} components",
                    fmt_g17(info.explained_ratio()),
                    map.n_components()
                ),
            );
            Some(map)
        }
        Projection::Lda { n_components } | Projection::Nca { n_components, .. } => {
            let alphabet = alphabet_for(&train_fm.labels, case)?;
            let classes: Vec<usize> = train_fm
                .labels
                .iter()
                .map(|&l| {
                    alphabet
                        .index_of(l)
                        .ok_or_else(|| Error::invalid(format!("label '{l}' is outside the alphabet")))
                })
                .collect::<Result<_>>()?;
            let (lda, info) = fit_lda(&scaled_train, &classes, *n_components)?;
            if info.zero_between_scatter {
                log(
                    "warn",
                    "transform",
                    "class means coincide; discriminant directions carry no signal",
                );
            }
            match &projection_cfg {
                Projection::Nca { options, .. } => {
                    let (map, report) = fit_nca(&scaled_train, &classes, &lda, options)?;
                    log(
                        "info",
                        "transform",
                        &format!(
                            "nca ran {} iterations, converged = {}",
                            report.iterations(),
                            report.converged
                        ),
                    );
                    Some(map)
                }
                _ => Some(lda),
            }
        }
    };
    if let Some(map) = &projection {
        map.save(&ctx.out_path("projection.txt"))?;
        ctx.record_output("projection.txt");
    }

    let mut jobs: Vec<(String, &Path)> = vec![("train".to_string(), train)];
    let mut seen = BTreeSet::new();
    seen.insert("train".to_string());
    for path in apply {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::invalid(format!("cannot name output for {}", path.display())))?
            .to_string();
        if !seen.insert(stem.clone()) {
            return Err(Error::invalid(format!(
                "apply inputs must have distinct file names; '{stem}' repeats"
            )));
        }
        jobs.push((stem, path));
    }

    for (index, (stem, path)) in jobs.iter().enumerate() {
        let fm = if index == 0 {
            train_fm.clone()
        } else {
            ctx.record_input(path)?;
            let mut fm = read_feature_matrix(path)?;
            if let Some(descriptors) = &descriptors {
                fm = mtsc_core::selection::project(&fm, descriptors)?;
            }
            fm
        };
        let rows = stage.apply(&fm.values)?;
        let rows = match &projection {
            Some(map) => map.apply(&rows)?,
            None => rows,
        };
        let headers: Vec<String> = match &projection {
            Some(_) => (0..rows[0].len()).map(|i| format!("component_{i}")).collect(),
            None => fm.descriptors.iter().map(|d| d.render()).collect(),
        };
        let name = format!("transformed_{stem}.csv");
        io::write_matrix(&Matrix::new(headers, rows)?, &ctx.out_path(&name))?;
        ctx.record_output(&name);
        let labels_name = format!("transformed_{stem}_labels.csv");
        io::write_labels(&ctx.out_path(&labels_name), &fm.sample_ids, &fm.labels)?;
        ctx.record_output(&labels_name);
    }
    println!(
        "transformed {} matrices into {}",
        jobs.len(),
        ctx.out_dir().display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// fit / predict
// ---------------------------------------------------------------------------

pub fn fit(
    ctx: &mut Ctx,
    config: &Config,
    train: &Path,
    fold: u8,
    dependency: &str,
    role: &str,
    case: Option<&str>,
) -> Result<()> {
    let split = split_spec(fold, dependency, role)?;
    let ds = read_input_dataset(ctx, train, split, case)?;
    let cfg = pipeline_config(config)?;
    let (fitted, report) = fit_pipeline(&ds, &cfg)?;
    for w in &report.warnings {
        log("warn", "fit", w);
    }
    if let Some(nca) = &report.nca {
        log(
            "info",
            "fit",
            &format!(
                "nca ran {} iterations, converged = {}",
                nca.iterations(),
                nca.converged
            ),
        );
    }
    let model_dir = ctx.out_path("model");
    fitted.save(&model_dir)?;
    let mut names: Vec<String> = std::fs::read_dir(&model_dir)
        .map_err(|e| Error::io(model_dir.display().to_string(), e))?
        .filter_map(|entry| entry.ok())
        .filter_map(|entry| entry.file_name().into_string().ok())
        .collect();
    names.sort();
    for name in names {
        ctx.record_output(&format!("model/{name}"));
    }
    match report.n_selected {
        Some(n) => println!(
            "fitted on {} samples, kept {n} features; model saved to {}",
            report.n_train_used,
            model_dir.display()
        ),
        None => println!(
            "fitted on {} samples; model saved to {}",
            report.n_train_used,
            model_dir.display()
        ),
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn predict(
    ctx: &mut Ctx,
    model: &Path,
    data: &Path,
    fold: u8,
    dependency: &str,
    role: &str,
    case: Option<&str>,
    model_id: &str,
) -> Result<()> {
    ctx.record_input_dir(model)?;
    let fitted = FittedPipeline::load(model)?;
    let split = split_spec(fold, dependency, role)?;
    let ds = read_input_dataset(ctx, data, split, case)?;
    let output = fitted.predict_dataset(&ds)?;
    for w in &output.warnings {
        log("warn", "predict", w);
    }
    if output.band_widened > 0 {
        log(
            "warn",
            "predict",
            &format!(
                "{} distance evaluations widened the band to stay feasible",
                output.band_widened
            ),
        );
    }
    let sample_ids: Vec<String> = ds.samples.iter().map(|s| s.id.clone()).collect();
    let pm = PredictionMatrix::new(
        vec![model_id.to_string()],
        sample_ids.clone(),
        fitted.alphabet.symbols().to_vec(),
        vec![output.probabilities.clone()],
    )?;
    save_prediction_matrix(&pm, &ctx.out_path("predictions.csv"))?;
    ctx.record_output("predictions.csv");
    let predicted: Vec<usize> = output.probabilities.iter().map(|p| p.argmax()).collect();
    let labels: Vec<char> = predicted.iter().map(|&i| fitted.alphabet.symbol(i)).collect();
    io::write_labels(&ctx.out_path("predicted_labels.csv"), &sample_ids, &labels)?;
    ctx.record_output("predicted_labels.csv");
    let truth: Vec<char> = ds.samples.iter().map(|s| s.label).collect();
    io::write_labels(&ctx.out_path("true_labels.csv"), &sample_ids, &truth)?;
    ctx.record_output("true_labels.csv");
    let accuracy = analysis::accuracy(&predicted, &ds.class_indices())?;
    println!("accuracy = {} over {} samples", fmt_g17(accuracy), sample_ids.len());
    Ok(())
}

// ---------------------------------------------------------------------------
// ensemble
// ---------------------------------------------------------------------------

fn parse_tier_file(path: &Path) -> Result<Vec<(String, Tier)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line == "model_id,tier" {
            continue;
        }
        let (id, tier) = line.split_once(',').ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: format!("expected `model_id,tier`, got {line:?}"),
        })?;
        out.push((id.trim().to_string(), Tier::parse(tier.trim())?));
    }
    if out.is_empty() {
        return Err(Error::invalid(format!(
            "{} assigns no tiers",
            path.display()
        )));
    }
    Ok(out)
}

/// Tier weights for the voted models: explicit assignments when a tier file
/// is given, otherwise the default 4 top / 4 middle / 8 bottom layout (by
/// individual accuracy), which needs exactly 16 models and a truth file.
fn resolve_weights(
    pm: &PredictionMatrix,
    tiers: Option<&Path>,
    truth: Option<&[usize]>,
) -> Result<TierWeights> {
    match tiers {
        Some(path) => TierWeights::from_tiers(parse_tier_file(path)?),
        None => {
            if pm.n_models() != 16 {
                return Err(Error::invalid(format!(
                    "default tier layout (4 top / 4 middle / 8 bottom) needs exactly 16 models, \
                     got {}; pass --tiers",
                    pm.n_models()
                )));
            }
            let truth = truth.ok_or_else(|| {
                Error::invalid("ranking models for the default tier layout needs --labels")
            })?;
            let ranked = rank_models(pm, truth)?;
            let assignments: Vec<(String, Tier)> = ranked
                .into_iter()
                .enumerate()
                .map(|(rank, (id, _))| {
                    let tier = if rank < 4 {
                        Tier::Top
                    } else if rank < 8 {
                        Tier::Middle
                    } else {
                        Tier::Bottom
                    };
                    (id, tier)
                })
                .collect();
            TierWeights::from_tiers(assignments)
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn ensemble(
    ctx: &mut Ctx,
    predictions: &Path,
    scheme: &str,
    models: &str,
    tiers: Option<&Path>,
    labels: Option<&Path>,
) -> Result<()> {
    ctx.record_input(predictions)?;
    let (pm, warnings) = load_prediction_matrix(predictions)?;
    for w in &warnings {
        log("warn", "ensemble", w);
    }
    let scheme = Scheme::parse(scheme)?;
    let truth: Option<Vec<usize>> = match labels {
        Some(path) => {
            ctx.record_input(path)?;
            Some(truth_indices(&pm, path)?)
        }
        None => None,
    };
    let subset: Vec<String> = match models {
        "all" => pm.model_ids().to_vec(),
        "top3" | "top4" => {
            let n = if models == "top3" { 3 } else { 4 };
            let truth = truth.as_deref().ok_or_else(|| {
                Error::invalid(format!("--models {models} ranks by accuracy and needs --labels"))
            })?;
            rank_models(&pm, truth)?
                .into_iter()
                .take(n)
                .map(|(id, _)| id)
                .collect()
        }
        list => list.split(',').map(|s| s.trim().to_string()).collect(),
    };
    let voted_pm = pm.subset(&subset)?;
    log(
        "info",
        "ensemble",
        &format!("{} vote over {} models", scheme.as_str(), voted_pm.n_models()),
    );
    let outcome: VoteOutcome = match scheme {
        Scheme::Plurality => plurality_vote(&pm, &subset)?,
        Scheme::Soft => soft_vote(&pm, &subset)?,
        Scheme::Weighted => weighted_vote(&voted_pm, &resolve_weights(&voted_pm, tiers, truth.as_deref())?)?,
        Scheme::WeightedSoft => {
            weighted_soft_vote(&voted_pm, &resolve_weights(&voted_pm, tiers, truth.as_deref())?)?
        }
    };
    let ensemble_id = format!("ensemble-{}", scheme.as_str());
    let voted = PredictionMatrix::new(
        vec![ensemble_id.clone()],
        pm.sample_ids().to_vec(),
        pm.symbols().to_vec(),
        vec![outcome.distributions.clone()],
    )?;
    save_prediction_matrix(&voted, &ctx.out_path("ensemble_predictions.csv"))?;
    ctx.record_output("ensemble_predictions.csv");
    let labels_out: Vec<char> = outcome.labels.iter().map(|&i| pm.symbols()[i]).collect();
    io::write_labels(
        &ctx.out_path("ensemble_labels.csv"),
        pm.sample_ids(),
        &labels_out,
    )?;
    ctx.record_output("ensemble_labels.csv");
    match &truth {
        Some(truth) => {
            let accuracy = analysis::accuracy(&outcome.labels, truth)?;
            println!(
                "{} vote accuracy = {} over {} samples",
                scheme.as_str(),
                fmt_g17(accuracy),
                truth.len()
            );
        }
        None => println!(
            "{} vote over {} models written to {}",
            scheme.as_str(),
            voted_pm.n_models(),
            ctx.out_path("ensemble_labels.csv").display()
        ),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

fn load_pm_and_truth(
    ctx: &mut Ctx,
    predictions: &Path,
    labels: &Path,
) -> Result<(PredictionMatrix, Vec<usize>)> {
    ctx.record_input(predictions)?;
    ctx.record_input(labels)?;
    let (pm, warnings) = load_prediction_matrix(predictions)?;
    for w in &warnings {
        log("warn", "analyze", w);
    }
    let truth = truth_indices(&pm, labels)?;
    Ok((pm, truth))
}

pub fn analyze_accuracy(ctx: &mut Ctx, predictions: &Path, labels: &Path) -> Result<()> {
    let (pm, truth) = load_pm_and_truth(ctx, predictions, labels)?;
    let mut text = String::from("model_id,accuracy\n");
    for (m, id) in pm.model_ids().iter().enumerate() {
        let accuracy = analysis::accuracy(&pm.argmax_labels(m), &truth)?;
        text.push_str(&format!("{id},{}\n", fmt_g17(accuracy)));
        println!("{id}\t{}", fmt_g17(accuracy));
    }
    write_text(ctx, "accuracy.csv", &text)?;
    Ok(())
}

pub fn analyze_prediction_space(
    ctx: &mut Ctx,
    predictions: &Path,
    labels: &Path,
    class: char,
) -> Result<()> {
    let (pm, truth) = load_pm_and_truth(ctx, predictions, labels)?;
    let target = pm
        .symbols()
        .iter()
        .position(|&s| s == class)
        .ok_or_else(|| Error::invalid(format!("class '{class}' is not among the prediction classes")))?;
    let space = analysis::prediction_space(&pm, &truth, target)?;
    let mut text = format!("model_id,{}\n", space.sample_ids.join(","));
    for (m, id) in space.model_ids.iter().enumerate() {
        let row: Vec<&str> = space.correct[m]
            .iter()
            .map(|&c| if c { "1" } else { "0" })
            .collect();
        text.push_str(&format!("{id},{}\n", row.join(",")));
    }
    write_text(ctx, "prediction_space.csv", &text)?;
    io::write_pgm(
        &ctx.out_path("prediction_space.pgm"),
        space.n_models(),
        space.n_samples(),
        &space.to_pixels(),
    )?;
    ctx.record_output("prediction_space.pgm");
    println!(
        "prediction space for class '{class}': {} models x {} samples",
        space.n_models(),
        space.n_samples()
    );
    Ok(())
}

pub fn analyze_failure(
    ctx: &mut Ctx,
    predictions: &Path,
    labels: &Path,
    anchor: &str,
) -> Result<()> {
    let (pm, truth) = load_pm_and_truth(ctx, predictions, labels)?;
    let report = analysis::failure_rescue(&pm, &truth, anchor)?;
    let mut text = String::from("model_id,rescued\n");
    for (id, count) in &report.rescues {
        text.push_str(&format!("{id},{count}\n"));
    }
    text.push_str(&format!("any,{}\n", report.union_rescued));
    write_text(ctx, "failure.csv", &text)?;
    println!(
        "anchor '{}' fails on {} samples; {} are classified correctly by at least one other model",
        report.anchor,
        report.anchor_failures(),
        report.union_rescued
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

/// Grid specs: `a,b,c` explicit values, `lo:hi` inclusive range, or
/// `lo:hi:step`.
pub fn parse_grid(spec: &str) -> Result<Vec<usize>> {
    let bad = |_| Error::invalid(format!("bad grid spec {spec:?}"));
    if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        let (lo, hi, step) = match parts.as_slice() {
            [lo, hi] => (lo, hi, 1usize),
            [lo, hi, step] => (lo, hi, step.parse::<usize>().map_err(bad)?),
            _ => return Err(Error::invalid(format!("bad grid spec {spec:?}"))),
        };
        let lo = lo.parse::<usize>().map_err(bad)?;
        let hi = hi.parse::<usize>().map_err(bad)?;
        if step == 0 || lo > hi {
            return Err(Error::invalid(format!(
                "bad grid spec {spec:?}: need lo <= hi and step >= 1"
            )));
        }
        Ok((lo..=hi).step_by(step).collect())
    } else {
        spec.split(',')
            .map(|t| t.trim().parse::<usize>().map_err(bad))
            .collect()
    }
}

pub fn sweep(
    ctx: &mut Ctx,
    config: &Config,
    param: &str,
    grid: &str,
    folds: &[String],
    dependency: &str,
    case: Option<&str>,
) -> Result<()> {
    let cfg = pipeline_config(config)?;
    let param = SweepParam::parse(param)?;
    let grid = parse_grid(grid)?;
    if folds.is_empty() {
        return Err(Error::invalid("pass at least one --fold train.mtsl:test.mtsl"));
    }
    let mut fold_sets = Vec::with_capacity(folds.len());
    for (i, spec) in folds.iter().enumerate() {
        let (train_path, test_path) = spec.split_once(':').ok_or_else(|| {
            Error::invalid(format!("--fold takes `train.mtsl:test.mtsl`, got {spec:?}"))
        })?;
        let train = read_input_dataset(
            ctx,
            Path::new(train_path),
            split_spec(i as u8, dependency, "train")?,
            case,
        )?;
        let test = read_input_dataset(
            ctx,
            Path::new(test_path),
            split_spec(i as u8, dependency, "test")?,
            case,
        )?;
        fold_sets.push((train, test));
    }
    log(
        "info",
        "sweep",
        &format!(
            "{} over {} grid points, {} folds",
            param.as_str(),
            grid.len(),
            fold_sets.len()
        ),
    );
    let points = pipeline::sweep(&cfg, param, &grid, &fold_sets, cfg.seed)?;
    write_sweep_csv(&points, &ctx.out_path("sweep.csv"))?;
    ctx.record_output("sweep.csv");
    let best = points
        .iter()
        .max_by(|a, b| {
            a.mean_accuracy
                .partial_cmp(&b.mean_accuracy)
                .expect("accuracies are finite")
                .then(b.value.cmp(&a.value))
        })
        .expect("sweep returns at least one point");
    println!(
        "best {} = {} with mean accuracy {}",
        param.as_str(),
        best.value,
        fmt_g17(best.mean_accuracy)
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// explain
// ---------------------------------------------------------------------------

fn overlay_pixels(map: &[Vec<f64>], scale: f64) -> Vec<u8> {
    map.iter()
        .flat_map(|row| {
            row.iter().map(move |&v| {
                if scale > 0.0 {
                    (255.0 * v / scale).round().clamp(0.0, 255.0) as u8
                } else {
                    0
                }
            })
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn explain(
    ctx: &mut Ctx,
    config: &Config,
    model: &Path,
    data: &Path,
    fold: u8,
    dependency: &str,
    role: &str,
    case: Option<&str>,
    sample_id: &str,
    replacement: &str,
    model_id: &str,
) -> Result<()> {
    ctx.record_input_dir(model)?;
    let fitted = FittedPipeline::load(model)?;
    let split = split_spec(fold, dependency, role)?;
    let ds = read_input_dataset(ctx, data, split, case)?;
    let sample = ds
        .samples
        .iter()
        .find(|s| s.id == sample_id)
        .ok_or_else(|| Error::invalid(format!("dataset has no sample '{sample_id}'")))?;
    let single = Dataset::new(vec![sample.clone()], ds.alphabet.clone(), ds.split)?;
    let (conditioned, warnings) = fitted.preprocess.condition(&single)?;
    for w in &warnings {
        log("warn", "explain", w);
    }
    let conditioned_sample = &conditioned.samples[0];
    let replacement_means: Vec<f64> = match replacement {
        "mean" => fitted.channel_means.clone(),
        "zero" => vec![0.0; CHANNEL_COUNT],
        other => {
            return Err(Error::invalid(format!(
                "--replacement must be mean or zero, got {other:?}"
            )))
        }
    };
    let defaults = explain::ExplainOptions::default();
    let opts = explain::ExplainOptions {
        n_slices: config.get_usize("explain.n_slices", defaults.n_slices)?,
        n_perturbations: config.get_usize("explain.n_perturbations", defaults.n_perturbations)?,
        top_k: config.get_usize("explain.top_k", defaults.top_k)?,
        seed: config.get_u64("run.seed", defaults.seed)?,
    };
    let report = explain::explain(
        conditioned_sample,
        model_id,
        |s| fitted.predict_conditioned_sample(s),
        &replacement_means,
        &opts,
    )?;
    let mut text = String::from("channel,slice,weight\n");
    for entry in &report.entries {
        text.push_str(&format!(
            "{},{},{}\n",
            entry.channel,
            entry.slice,
            fmt_g17(entry.weight)
        ));
    }
    write_text(ctx, "explanation.csv", &text)?;
    let overlay = explain::render_overlay(&report)?;
    let headers: Vec<String> = (0..overlay.n_slices).map(|i| format!("slice_{i}")).collect();
    io::write_matrix(
        &Matrix::new(headers.clone(), overlay.positive.clone())?,
        &ctx.out_path("overlay_positive.csv"),
    )?;
    ctx.record_output("overlay_positive.csv");
    io::write_matrix(
        &Matrix::new(headers, overlay.negative.clone())?,
        &ctx.out_path("overlay_negative.csv"),
    )?;
    ctx.record_output("overlay_negative.csv");
    let scale = overlay
        .positive
        .iter()
        .chain(&overlay.negative)
        .flatten()
        .fold(0.0f64, |acc, &v| acc.max(v));
    io::write_pgm(
        &ctx.out_path("overlay_positive.pgm"),
        CHANNEL_COUNT,
        overlay.n_slices,
        &overlay_pixels(&overlay.positive, scale),
    )?;
    ctx.record_output("overlay_positive.pgm");
    io::write_pgm(
        &ctx.out_path("overlay_negative.pgm"),
        CHANNEL_COUNT,
        overlay.n_slices,
        &overlay_pixels(&overlay.negative, scale),
    )?;
    ctx.record_output("overlay_negative.pgm");
    let predicted = fitted.alphabet.symbol(report.predicted_class);
    match report.entries.first() {
        Some(top) => println!(
            "sample {sample_id} predicted '{predicted}'; strongest segment: channel {} slice {} (weight {})",
            top.channel,
            top.slice,
            fmt_g17(top.weight)
        ),
        None => println!("sample {sample_id} predicted '{predicted}'; no non-zero segments"),
    }
    Ok(())
}
