//! `prism`: extract radial spectrum features, train the LDA attributor,
//! predict sources, and run resampled evaluations.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info, warn};
use prism_core::evaluation::{ablation_document, summary_document, EvalError};
use prism_core::feature_table::FeatureWriter;
use prism_core::{
    binarize, extract_entries, make_splits, read_features, read_manifest, run_ablation, run_protocol, ExtractorCache,
    FeatureFileError, FeatureSubset, FeatureTable, Grouping, ImageIoError, LdaConfig, LdaError, LdaModel,
    Normalization, Regularization, SplitStrategy, DEFAULT_BIN_COUNT,
};
use serde_json::{json, Map, Value};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "prism", version, about = "Attribute images to their generator from radial Fourier fingerprints")]
struct Cli {
    /// Worker threads for extraction and evaluation [default: all cores]
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    workers: Option<u32>,

    /// More log output (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Decode every manifest image and write one feature row per image
    Extract {
        /// CSV manifest with header path,label,prompt_id
        #[arg(long)]
        manifest: PathBuf,
        /// Output feature CSV
        #[arg(long)]
        output: PathBuf,
        /// Radial bins per channel
        #[arg(long = "n-r", default_value_t = DEFAULT_BIN_COUNT, value_parser = clap::value_parser!(usize))]
        n_r: usize,
    },
    /// Fit the LDA model on a feature file
    Train {
        #[arg(long)]
        features: PathBuf,
        /// Output model JSON
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Predict the source of one image or every image in a manifest
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
        image: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Resampled train/test evaluation with a JSON report
    Evaluate {
        #[arg(long)]
        features: PathBuf,
        /// Output report JSON
        #[arg(long)]
        report: PathBuf,
        /// Number of splits
        #[arg(long, default_value_t = 1000)]
        splits: usize,
        /// Training share of each split
        #[arg(long, default_value_t = 0.8)]
        ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// prompt-pairs, random-stratified or published
        #[arg(long, default_value_t = Grouping::PromptPairs)]
        grouping: Grouping,
        /// Test image paths, one per line (with --grouping published)
        #[arg(long)]
        test_list: Option<PathBuf>,
        /// Evaluate all, magnitude and phase subsets on the same splits
        #[arg(long)]
        ablation: bool,
        #[command(flatten)]
        fit: FitArgs,
    },
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Feature subset: all, magnitude or phase
    #[arg(long, default_value_t = FeatureSubset::All)]
    subset: FeatureSubset,
    /// Ridge on the within-class scatter: `auto` or a value >= 0
    #[arg(long, default_value = "auto", value_parser = parse_lambda)]
    lambda: Regularization,
    /// z-score or min-max
    #[arg(long, default_value_t = Normalization::ZScore)]
    normalization: Normalization,
    /// Comma-separated labels to merge into `fake`; all others become `real`
    #[arg(long, value_delimiter = ',')]
    fake_labels: Vec<String>,
}

impl FitArgs {
    fn config(&self) -> LdaConfig {
        LdaConfig {
            regularization: self.lambda,
            subset: self.subset,
            normalization: self.normalization,
        }
    }
}

fn parse_lambda(s: &str) -> Result<Regularization, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(Regularization::Auto);
    }
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(Regularization::Fixed(v)),
        _ => Err(format!("`{s}` is neither `auto` nor a finite value >= 0")),
    }
}

#[derive(Debug)]
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn data(message: impl fmt::Display) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.to_string(),
        }
    }

    fn internal(message: impl fmt::Display) -> Self {
        Self {
            code: EXIT_INTERNAL,
            message: message.to_string(),
        }
    }
}

impl From<ImageIoError> for CliError {
    fn from(e: ImageIoError) -> Self {
        Self::data(e)
    }
}

impl From<FeatureFileError> for CliError {
    fn from(e: FeatureFileError) -> Self {
        Self::data(e)
    }
}

impl From<LdaError> for CliError {
    fn from(e: LdaError) -> Self {
        Self::data(e)
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::InvalidRatio(_) | EvalError::InvalidSplitCount => Self::usage(e.to_string()),
            other => Self::data(other),
        }
    }
}

fn write_output(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::internal(format!("cannot write {}: {e}", path.display())))
}

fn cmd_extract(manifest: &Path, output: &Path, n_r: usize) -> Result<(), CliError> {
    if n_r == 0 {
        return Err(CliError::usage("--n-r must be at least 1"));
    }
    let manifest = read_manifest(manifest)?;
    let outcome = extract_entries(&manifest.entries, n_r);
    for (entry, err) in &outcome.failures {
        warn!("skipping {}: {err}", entry.path.display());
    }
    if outcome.table.is_empty() {
        return Err(CliError::data(format!("all {} entries failed to extract", manifest.entries.len())));
    }
    let mut writer = FeatureWriter::create(output, n_r)?;
    for (e, f) in outcome.table.entries.iter().zip(&outcome.table.features) {
        writer.write_row(e, f)?;
    }
    writer.finish()?;
    println!(
        "extracted {} of {} images ({} failed), {} features each -> {}",
        outcome.table.len(),
        manifest.entries.len(),
        outcome.failures.len(),
        6 * n_r,
        output.display()
    );
    Ok(())
}

fn load_table(features: &Path, fake_labels: &[String]) -> Result<FeatureTable, CliError> {
    let mut table = read_features(features)?;
    if !fake_labels.is_empty() {
        table.entries = binarize(&table.entries, fake_labels)?;
    }
    Ok(table)
}

fn cmd_train(features: &Path, model_path: &Path, args: &FitArgs) -> Result<(), CliError> {
    let table = load_table(features, &args.fake_labels)?;
    let labels = table.labels();
    let model = prism_core::fit(&table.features, &labels, &args.config())?;
    model.save(model_path).map_err(|e| match e {
        LdaError::Io(io) => CliError::internal(format!("cannot write {}: {io}", model_path.display())),
        other => CliError::data(other),
    })?;
    let predicted = model.predict_labels(&table.features)?;
    let hits = predicted
        .iter()
        .zip(&labels)
        .filter(|(&p, l)| model.vocabulary().labels()[p] == **l)
        .count();
    println!("trained on {} samples, {} features ({} selected)", table.len(), model.input_dim(), model.selected_dim());
    for (label, count) in model.vocabulary().labels().iter().zip(model.class_counts()) {
        println!("  {label}: {count}");
    }
    println!("embedding dimension: {}", model.embedding_dim());
    println!("regularization: {:e}", model.regularization());
    println!("training accuracy: {:.4}", hits as f64 / table.len() as f64);
    println!("model -> {}", model_path.display());
    Ok(())
}

fn prediction_record(model: &LdaModel, cache: &ExtractorCache, path: &Path) -> Result<Value, String> {
    let features = cache.extract_file(path).map_err(|e| e.to_string())?;
    let p = model.predict(features.values()).map_err(|e| e.to_string())?;
    let posteriors: Map<String, Value> = model
        .vocabulary()
        .labels()
        .iter()
        .zip(&p.posteriors)
        .map(|(l, &v)| (l.clone(), json!(v)))
        .collect();
    Ok(json!({
        "path": path.display().to_string(),
        "label": p.label,
        "posteriors": posteriors,
    }))
}

fn cmd_predict(model_path: &Path, image: Option<&Path>, manifest: Option<&Path>) -> Result<(), CliError> {
    let model = LdaModel::load(model_path)?;
    let bin_count = model
        .bin_count()
        .ok_or_else(|| CliError::data(format!("model input dimension {} is not a feature layout", model.input_dim())))?;
    let cache = ExtractorCache::new(bin_count);
    let targets: Vec<(PathBuf, Option<String>)> = match (image, manifest) {
        (Some(p), _) => vec![(p.to_path_buf(), None)],
        (None, Some(m)) => read_manifest(m)?
            .entries
            .into_iter()
            .map(|e| (e.path, Some(e.label)))
            .collect(),
        (None, None) => return Err(CliError::usage("one of --image or --manifest is required")),
    };
    use rayon::prelude::*;
    let records: Vec<Result<Value, String>> =
        targets.par_iter().map(|(p, _)| prediction_record(&model, &cache, p)).collect();
    let mut ok = 0;
    for ((path, expected), record) in targets.iter().zip(records) {
        let mut value = match record {
            Ok(v) => {
                ok += 1;
                v
            }
            Err(e) => {
                error!("{}: {e}", path.display());
                json!({ "path": path.display().to_string(), "error": e })
            }
        };
        if let (Some(exp), Some(obj)) = (expected, value.as_object_mut()) {
            obj.insert("expected".into(), json!(exp));
        }
        println!("{value}");
    }
    if ok == 0 {
        return Err(CliError::data("no image could be scored"));
    }
    Ok(())
}

fn read_test_list(path: &Path, table: &FeatureTable) -> Result<Vec<usize>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    let index: std::collections::HashMap<&Path, usize> =
        table.entries.iter().enumerate().map(|(i, e)| (e.path.as_path(), i)).collect();
    text.lines()
        .map(str::trim)
        .enumerate()
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(n, l)| {
            index.get(Path::new(l)).copied().ok_or_else(|| {
                CliError::data(format!("{}, line {}: `{l}` is not in the feature file", path.display(), n + 1))
            })
        })
        .collect()
}

struct EvaluateArgs<'a> {
    features: &'a Path,
    report: &'a Path,
    splits: usize,
    ratio: f64,
    seed: u64,
    grouping: Grouping,
    test_list: Option<&'a Path>,
    ablation: bool,
    fit: &'a FitArgs,
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let table = load_table(a.features, &a.fit.fake_labels)?;
    let strategy = match (a.grouping, a.test_list) {
        (Grouping::Published, Some(list)) => SplitStrategy::Published {
            test: read_test_list(list, &table)?,
        },
        (Grouping::Published, None) => return Err(CliError::usage("--grouping published needs --test-list")),
        (_, Some(_)) => return Err(CliError::usage("--test-list only applies to --grouping published")),
        (Grouping::PromptPairs, None) => SplitStrategy::PromptPairs,
        (Grouping::RandomStratified, None) => SplitStrategy::RandomStratified,
    };
    let splits = make_splits(&table.entries, a.splits, a.ratio, &strategy, a.seed)?;
    info!("{} splits over {} samples", splits.len(), table.len());
    let config = a.fit.config();
    let runs = if a.ablation {
        let ab = run_ablation(&table, &splits, &config)?;
        write_output(a.report, &ablation_document(&ab, &config, a.seed, a.ratio))?;
        ab.runs
    } else {
        let s = run_protocol(&table, &splits, &config)?;
        write_output(a.report, &summary_document(&s, &config, a.seed, a.ratio))?;
        vec![s]
    };
    for s in &runs {
        println!(
            "subset {}: accuracy {:.4} +/- {:.4} [p5 {:.4}, p95 {:.4}], weighted F1 {:.4}, average split {}",
            s.subset,
            s.accuracy.mean,
            s.accuracy.std,
            s.accuracy.p5,
            s.accuracy.p95,
            s.weighted_f1.mean,
            s.average_split
        );
        if s.duplicate_splits > 0 {
            println!("  {} split(s) repeat an earlier test group set", s.duplicate_splits);
        }
    }
    println!("report -> {}", a.report.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        pool = pool.num_threads(n as usize);
    }
    let pool = pool.build().map_err(CliError::internal)?;
    pool.install(|| match &cli.command {
        Command::Extract { manifest, output, n_r } => cmd_extract(manifest, output, *n_r),
        Command::Train { features, model, fit } => cmd_train(features, model, fit),
        Command::Predict { model, image, manifest } => cmd_predict(model, image.as_deref(), manifest.as_deref()),
        Command::Evaluate {
            features,
            report,
            splits,
            ratio,
            seed,
            grouping,
            test_list,
            ablation,
            fit,
        } => cmd_evaluate(EvaluateArgs {
            features,
            report,
            splits: *splits,
            ratio: *ratio,
            seed: *seed,
            grouping: *grouping,
            test_list: test_list.as_deref(),
            ablation: *ablation,
            fit,
        }),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let outcome = std::panic::catch_unwind(|| run(cli))
        .unwrap_or_else(|_| Err(CliError::internal("internal error (panic), see message above")));
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
