//! `handwash`: drive the gesture classification pipeline from the shell.
//!
//! Exit codes: 0 on success, 1 on internal errors, 2 on bad input or
//! configuration.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use handwash_core::dataset::{load_manifest, make_split, save_manifest, DEFAULT_VAL_FRACTION};
use handwash_core::fixtures::{generate_corpus, CorpusSpec, FIXTURE_SIZE};
use handwash_core::model::{BackboneKind, BackboneSpec, WeightStore, CACHE_ENV, STUB_FEATURE_DIM};
use handwash_core::predictor::DEFAULT_WINDOW;
use handwash_core::run::{
    eval_predictions, eval_run, predict_run, read_predictions, train_run, PredictOptions, RunConfig,
};
use handwash_core::trainer::{TrainConfig, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS, DEFAULT_LEARNING_RATE};
use handwash_core::video::extract_corpus;
use handwash_core::{Error, LabelRegistry, Result};

const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Parser)]
#[command(name = "handwash", version, about = "Hand-hygiene gesture video classification")]
struct Cli {
    /// Root of the pretrained-weight cache.
    #[arg(long, global = true, env = CACHE_ENV)]
    cache: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic clip corpus (one directory per class).
    Fixtures(FixturesArgs),
    /// Extract frames from a clip corpus and write a manifest.
    Extract(ExtractArgs),
    /// Assign a stratified train/validation split to a manifest.
    Split(SplitArgs),
    /// Train a classification head on a split manifest.
    Train(TrainArgs),
    /// Write a classification report for a trained run.
    Eval(EvalArgs),
    /// Classify every frame of a clip with a trained run.
    Predict(PredictArgs),
}

#[derive(Args)]
struct FixturesArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    per_class: usize,
    #[arg(long, default_value_t = 30)]
    frames: usize,
    #[arg(long, default_value_t = FIXTURE_SIZE)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ExtractArgs {
    /// Clip corpus: one subdirectory per class.
    #[arg(long)]
    corpus: PathBuf,
    /// Output directory for frames and `manifest.jsonl`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Comma-separated class names, in registry order.
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<String>>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Where to write the split manifest; defaults to rewriting the input.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_VAL_FRACTION)]
    val_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Run directory to create.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_EPOCHS)]
    epochs: usize,
    /// `resnet50` or `stub`.
    #[arg(long, default_value = "resnet50")]
    backbone: BackboneKind,
    /// Stub backbone output width.
    #[arg(long, default_value_t = STUB_FEATURE_DIM)]
    feature_dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    batch_size: usize,
    #[arg(long, default_value_t = DEFAULT_LEARNING_RATE)]
    learning_rate: f64,
    /// Hidden layer widths of the head, comma-separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    dropout: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Score these `{"path", "label"}` lines instead of running the model.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Report directory; defaults to the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    clip: PathBuf,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
    /// Frame indices to save as annotated stills, comma-separated.
    #[arg(long, value_delimiter = ',')]
    annotate_frames: Vec<usize>,
    /// Class names to report predictions with; defaults to the run's labels.
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<String>>,
    /// Output directory; defaults to `{run}/predictions/{clip stem}`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn registry(names: Option<Vec<String>>) -> Result<LabelRegistry> {
    match names {
        Some(names) => LabelRegistry::new(names),
        None => Ok(LabelRegistry::hand_hygiene()),
    }
}

fn fixtures(args: FixturesArgs) -> Result<()> {
    let spec = CorpusSpec {
        per_class: args.per_class,
        frames_per_clip: args.frames,
        height: args.size,
        width: args.size,
        seed: args.seed,
    };
    log::info!("fixtures: {spec:?} -> {}", args.out.display());
    let clips = generate_corpus(&args.out, &LabelRegistry::hand_hygiene(), &spec)?;
    println!("wrote {} clips to {}", clips.len(), args.out.display());
    Ok(())
}

fn extract(args: ExtractArgs) -> Result<()> {
    let labels = registry(args.labels)?;
    log::info!(
        "extract: corpus {} stride {} labels {:?} -> {}",
        args.corpus.display(),
        args.stride,
        labels.names(),
        args.out.display()
    );
    if !args.corpus.is_dir() {
        return Err(Error::Io {
            path: args.corpus.clone(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "corpus directory not found"),
        });
    }
    let scan = extract_corpus(&args.corpus, &labels, args.stride, &args.out)?;
    let path = args.out.join(MANIFEST_FILE);
    save_manifest(&scan.manifest, &path)?;
    println!("wrote {} samples to {}", scan.manifest.len(), path.display());
    Ok(())
}

fn split(args: SplitArgs) -> Result<()> {
    let out = args.out.unwrap_or_else(|| args.manifest.clone());
    log::info!(
        "split: {} val_fraction {} seed {} -> {}",
        args.manifest.display(),
        args.val_fraction,
        args.seed,
        out.display()
    );
    let split = make_split(&load_manifest(&args.manifest)?, args.val_fraction, args.seed)?;
    save_manifest(&split, &out)?;
    let val = split.indices(handwash_core::dataset::Split::Val).len();
    println!("{} train / {val} val samples -> {}", split.len() - val, out.display());
    Ok(())
}

fn train(args: TrainArgs, store: &WeightStore) -> Result<()> {
    let labels = load_manifest(&args.manifest)?.registry().clone();
    let backbone = match args.backbone {
        BackboneKind::Stub => BackboneSpec::stub(args.feature_dim),
        BackboneKind::PretrainedResnet50 => BackboneSpec::resnet50(),
    };
    let train = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let mut config = RunConfig::new(args.manifest.clone(), labels, backbone, train);
    if let Some(hidden) = args.hidden {
        config.head.hidden_sizes = hidden;
    }
    if let Some(dropout) = args.dropout {
        config.head.dropout_rate = dropout;
    }
    log::info!("train: {}", serde_json::to_string(&config)?);
    let (outcome, doc) = train_run(&config, store, &args.out)?;
    let last = outcome.history.last().expect("at least one epoch");
    println!(
        "{} epochs: train_loss {:.4} val_acc {:.4}; best epoch {}; report micro f1 {:.2}",
        outcome.history.len(),
        last.train_loss,
        last.val_acc,
        outcome.best_epoch,
        doc.report.micro_avg.f1
    );
    println!("run written to {}", args.out.display());
    Ok(())
}

fn eval(args: EvalArgs, store: &WeightStore) -> Result<()> {
    let out = args.out.unwrap_or_else(|| args.run.clone());
    log::info!(
        "eval: run {} manifest {} predictions {:?} -> {}",
        args.run.display(),
        args.manifest.display(),
        args.predictions,
        out.display()
    );
    let manifest = load_manifest(&args.manifest)?;
    let doc = match &args.predictions {
        Some(p) => eval_predictions(&manifest, &read_predictions(p)?, &out)?,
        None if out == args.run => eval_run(&args.run, &manifest, store)?,
        None => {
            let doc = eval_run(&args.run, &manifest, store)?;
            copy_report(&args.run, &out)?;
            doc
        }
    };
    print!("{}", handwash_core::metrics::render_text(&doc.report));
    Ok(())
}

fn copy_report(run: &Path, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::Io { path: out.to_path_buf(), source: e })?;
    for name in [handwash_core::run::REPORT_JSON, handwash_core::run::REPORT_TXT] {
        std::fs::copy(run.join(name), out.join(name)).map_err(|e| Error::Io { path: out.join(name), source: e })?;
    }
    Ok(())
}

fn predict(args: PredictArgs, store: &WeightStore) -> Result<()> {
    let stem = args.clip.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let out = args.out.unwrap_or_else(|| args.run.join("predictions").join(stem));
    let labels = args.labels.map(LabelRegistry::new).transpose()?;
    log::info!(
        "predict: run {} clip {} window {} annotate {:?} -> {}",
        args.run.display(),
        args.clip.display(),
        args.window,
        args.annotate_frames,
        out.display()
    );
    let options = PredictOptions {
        window: args.window,
        annotate: args.annotate_frames,
        labels,
    };
    let (timeline, stills) = predict_run(&args.run, &args.clip, &options, store, &out)?;
    println!(
        "{} frames classified, {} stills written to {}",
        timeline.len(),
        stills.len(),
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let store = cli.cache.map(WeightStore::new).unwrap_or_else(WeightStore::from_env);
    let result = match cli.command {
        Command::Fixtures(a) => fixtures(a),
        Command::Extract(a) => extract(a),
        Command::Split(a) => split(a),
        Command::Train(a) => train(a, &store),
        Command::Eval(a) => eval(a, &store),
        Command::Predict(a) => predict(a, &store),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_user_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
