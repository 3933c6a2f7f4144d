//! `mtsc`: command-line front end for the multivariate time-series
//! classification pipeline.
//!
//! Every invocation is a *run*: it writes its outputs plus exactly one
//! `manifest.json` (command line, resolved config, seed, thread count,
//! SHA-256 digests of all inputs, versions, timing) into the `--out`
//! directory, so results stay reproducible. Logs go to stderr as
//! tab-separated `level<TAB>component<TAB>message` lines. Exit codes:
//! 0 success, 1 validation or usage error, 2 I/O error.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mtsc_core::{Error, Result};

/// Stderr log line: `level<TAB>component<TAB>message`.
pub fn log(level: &str, component: &str, message: &str) {
    eprintln!("{level}\t{component}\t{message}");
}

#[derive(Parser)]
#[command(
    name = "mtsc",
    version,
    about = "Multivariate time-series classification: preprocess, extract, select, fit, predict, vote, explain",
    propagate_version = true
)]
struct Cli {
    /// Run directory: receives all outputs and exactly one manifest.json
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Configuration file with flat `section.key = value` lines
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Seed for stochastic components (overrides config key run.seed)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (falls back to MTS_THREADS, then all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

/// Which cross-validation slot a dataset file belongs to.
#[derive(Args)]
struct SplitArgs {
    /// Fold index
    #[arg(long, default_value_t = 0)]
    fold: u8,

    /// wd (writer-dependent) or wi (writer-independent)
    #[arg(long, default_value = "wd")]
    dependency: String,

    /// train or test (defaults to the side the command usually consumes)
    #[arg(long)]
    role: Option<String>,
}

impl SplitArgs {
    fn role_or(&self, default: &'static str) -> String {
        self.role.clone().unwrap_or_else(|| default.to_string())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Import raw JSON-lines recordings into a validated dataset
    Import {
        /// Raw recordings, one JSON object per line
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        split: SplitArgs,
        /// Force the label alphabet: lower, upper or combined
        #[arg(long)]
        case: Option<String>,
    },
    /// High-pass filter and smooth a dataset; optionally trim length outliers
    Preprocess {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        split: SplitArgs,
        #[arg(long)]
        case: Option<String>,
        /// Apply the training recipe, which also drops out-of-bound lengths
        #[arg(long)]
        for_training: bool,
    },
    /// Sample-count and length statistics of a dataset
    Stats {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        split: SplitArgs,
        #[arg(long)]
        case: Option<String>,
    },
    /// Extract the full statistical feature catalog
    Extract {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        split: SplitArgs,
        #[arg(long)]
        case: Option<String>,
    },
    /// Pick class-relevant features from a training feature matrix
    Select {
        /// Training feature matrix (extract output)
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        case: Option<String>,
        /// Minimum number of classes a feature must be significant for
        #[arg(long)]
        n_significant: Option<usize>,
        /// False-discovery level of the per-class correction
        #[arg(long)]
        fdr_q: Option<f64>,
    },
    /// Fit scaling/projection on one feature matrix and transform others
    Transform {
        /// Feature matrix the maps are fitted on
        #[arg(long)]
        train: PathBuf,
        /// Further matrices to transform with the fitted maps
        #[arg(long)]
        apply: Vec<PathBuf>,
        /// Restrict all matrices to a saved selection first
        #[arg(long)]
        selection: Option<PathBuf>,
        #[arg(long)]
        case: Option<String>,
    },
    /// Fit a complete classification pipeline on a training dataset
    Fit {
        #[arg(long)]
        train: PathBuf,
        #[command(flatten)]
        split: SplitArgs,
        #[arg(long)]
        case: Option<String>,
    },
    /// Score a dataset with a fitted pipeline
    Predict {
        /// Model directory written by fit
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        split: SplitArgs,
        #[arg(long)]
        case: Option<String>,
        /// Row label in the prediction matrix
        #[arg(long, default_value = "model")]
        model_id: String,
    },
    /// Combine several models' predictions by voting
    Ensemble {
        /// Prediction matrix holding every model's class probabilities
        #[arg(long)]
        predictions: PathBuf,
        /// plurality, weighted, soft or weighted-soft
        #[arg(long)]
        scheme: String,
        /// all, top3, top4, or an explicit comma-separated model-id list
        #[arg(long, default_value = "all")]
        models: String,
        /// `model_id,tier` lines assigning top/middle/bottom weights
        #[arg(long)]
        tiers: Option<PathBuf>,
        /// True labels; enables accuracy reporting and ranked presets
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Inspect prediction matrices
    Analyze {
        #[command(subcommand)]
        what: AnalyzeCommand,
    },
    /// Grid-search one pipeline parameter over train/test folds
    Sweep {
        /// n_significant, n_components, k or band_radius
        #[arg(long)]
        param: String,
        /// Values: `1,5,9`, `1:26` or `1:26:4`
        #[arg(long)]
        grid: String,
        /// `train.mtsl:test.mtsl`; repeat for more folds
        #[arg(long = "fold", value_name = "TRAIN:TEST")]
        folds: Vec<String>,
        /// wd or wi, applied to every fold
        #[arg(long, default_value = "wd")]
        dependency: String,
        #[arg(long)]
        case: Option<String>,
    },
    /// Explain one prediction by time-slice perturbation
    Explain {
        /// Model directory written by fit
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        split: SplitArgs,
        #[arg(long)]
        case: Option<String>,
        /// Id of the sample to explain
        #[arg(long)]
        sample: String,
        /// Number of time slices per channel
        #[arg(long)]
        slices: Option<usize>,
        /// Number of random perturbations
        #[arg(long)]
        perturbations: Option<usize>,
        /// Keep only the strongest segments
        #[arg(long)]
        top: Option<usize>,
        /// What masked segments are replaced with: mean or zero
        #[arg(long, default_value = "mean")]
        replacement: String,
        #[arg(long, default_value = "model")]
        model_id: String,
    },
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Per-model accuracy table
    Accuracy {
        #[arg(long)]
        predictions: PathBuf,
        /// True labels file
        #[arg(long)]
        labels: PathBuf,
    },
    /// Model-by-sample correctness map for one class
    PredictionSpace {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Class symbol to restrict to
        #[arg(long)]
        class: char,
    },
    /// Which models fix the samples an anchor model gets wrong
    Failure {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Model id whose failures are examined
        #[arg(long)]
        anchor: String,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        let code = match &e {
            Error::Io { .. } => 2,
            _ => 1,
        };
        log("error", "mtsc", &e.to_string());
        std::process::exit(code);
    }
}

/// Threads: `--threads` flag, then `MTS_THREADS`, then config `run.threads`,
/// then every available core.
fn resolve_threads(flag: Option<usize>, config: &config::Config) -> Result<usize> {
    let threads = match flag {
        Some(n) => n,
        None => match std::env::var("MTS_THREADS") {
            Ok(raw) => raw.parse::<usize>().map_err(|_| {
                Error::invalid(format!("MTS_THREADS must be a positive integer, got {raw:?}"))
            })?,
            Err(_) => {
                let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
                config.get_usize("run.threads", cores)?
            }
        },
    };
    if threads == 0 {
        return Err(Error::invalid("thread count must be at least 1"));
    }
    Ok(threads)
}

fn run(cli: Cli) -> Result<()> {
    let mut config = config::Config::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.set_override("run.seed", seed.to_string());
    }
    let threads = resolve_threads(cli.threads, &config)?;
    config.set_override("run.threads", threads.to_string());
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::invalid(format!("thread pool setup failed: {e}")))?;

    // Per-command flags that shadow config keys, applied before the manifest
    // snapshots the configuration.
    match &cli.command {
        Command::Select { n_significant, fdr_q, .. } => {
            if let Some(n) = n_significant {
                config.set_override("select.n_significant", n.to_string());
            }
            if let Some(q) = fdr_q {
                config.set_override("select.fdr_q", q.to_string());
            }
        }
        Command::Explain { slices, perturbations, top, .. } => {
            if let Some(n) = slices {
                config.set_override("explain.n_slices", n.to_string());
            }
            if let Some(n) = perturbations {
                config.set_override("explain.n_perturbations", n.to_string());
            }
            if let Some(n) = top {
                config.set_override("explain.top_k", n.to_string());
            }
        }
        _ => {}
    }

    let out = cli
        .out
        .as_deref()
        .ok_or_else(|| Error::invalid("--out <DIR> is required"))?;
    let seed = config.get_u64("run.seed", 0)?;
    let command_line: Vec<String> = std::env::args().collect();
    let mut ctx =
        manifest::Ctx::create(out, command_line, config.snapshot().clone(), seed, threads)?;
    if let Some(path) = &cli.config {
        ctx.record_input(path)?;
    }

    match &cli.command {
        Command::Import { data, split, case } => commands::import(
            &mut ctx,
            &config,
            data,
            split.fold,
            &split.dependency,
            &split.role_or("train"),
            case.as_deref(),
        )?,
        Command::Preprocess { data, split, case, for_training } => commands::preprocess(
            &mut ctx,
            &config,
            data,
            split.fold,
            &split.dependency,
            &split.role_or("train"),
            case.as_deref(),
            *for_training,
        )?,
        Command::Stats { data, split, case } => commands::stats(
            &mut ctx,
            data,
            split.fold,
            &split.dependency,
            &split.role_or("train"),
            case.as_deref(),
        )?,
        Command::Extract { data, split, case } => commands::extract(
            &mut ctx,
            data,
            split.fold,
            &split.dependency,
            &split.role_or("train"),
            case.as_deref(),
        )?,
        Command::Select { features, case, .. } => {
            commands::select(&mut ctx, &config, features, case.as_deref())?
        }
        Command::Transform { train, apply, selection, case } => commands::transform(
            &mut ctx,
            &config,
            train,
            apply,
            selection.as_deref(),
            case.as_deref(),
        )?,
        Command::Fit { train, split, case } => commands::fit(
            &mut ctx,
            &config,
            train,
            split.fold,
            &split.dependency,
            &split.role_or("train"),
            case.as_deref(),
        )?,
        Command::Predict { model, data, split, case, model_id } => commands::predict(
            &mut ctx,
            model,
            data,
            split.fold,
            &split.dependency,
            &split.role_or("test"),
            case.as_deref(),
            model_id,
        )?,
        Command::Ensemble { predictions, scheme, models, tiers, labels } => commands::ensemble(
            &mut ctx,
            predictions,
            scheme,
            models,
            tiers.as_deref(),
            labels.as_deref(),
        )?,
        Command::Analyze { what } => match what {
            AnalyzeCommand::Accuracy { predictions, labels } => {
                commands::analyze_accuracy(&mut ctx, predictions, labels)?
            }
            AnalyzeCommand::PredictionSpace { predictions, labels, class } => {
                commands::analyze_prediction_space(&mut ctx, predictions, labels, *class)?
            }
            AnalyzeCommand::Failure { predictions, labels, anchor } => {
                commands::analyze_failure(&mut ctx, predictions, labels, anchor)?
            }
        },
        Command::Sweep { param, grid, folds, dependency, case } => commands::sweep(
            &mut ctx,
            &config,
            param,
            grid,
            folds,
            dependency,
            case.as_deref(),
        )?,
        Command::Explain {
            model,
            data,
            split,
            case,
            sample,
            replacement,
            model_id,
            ..
        } => commands::explain(
            &mut ctx,
            &config,
            model,
            data,
            split.fold,
            &split.dependency,
            &split.role_or("test"),
            case.as_deref(),
            sample,
            replacement,
            model_id,
        )?,
    }

    let manifest_path = ctx.finish()?;
    log(
        "info",
        "mtsc",
        &format!("manifest written to {}", manifest_path.display()),
    );
    Ok(())
}
