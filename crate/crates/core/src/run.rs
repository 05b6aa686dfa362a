//! Run directories: everything one training run produces, side by side.
//!
//! ```text
//! {run}/config.json    resolved RunConfig
//! {run}/history.json   per-epoch metrics
//! {run}/curves.png     loss / accuracy plot
//! {run}/model/         best-validation-accuracy checkpoint
//! {run}/report.json    full-precision classification report
//! {run}/report.txt     rendered report table
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{load_manifest, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::labels::LabelRegistry;
use crate::metrics::{confusion, render_text, report, ClassReport, ConfusionMatrix, ReportDocument};
use crate::model::{argmax, load_checkpoint, BackboneSpec, HeadSpec, TransferModel, WeightStore};
use crate::predictor::{annotate_frames, predict_clip, PredictionTimeline};
use crate::trainer::{emit_curves, train, TrainConfig, TrainOutcome};
use crate::video::ClipRef;

pub const CONFIG_FILE: &str = "config.json";
pub const HISTORY_FILE: &str = "history.json";
pub const CURVES_FILE: &str = "curves.png";
pub const MODEL_DIR: &str = "model";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const TIMELINE_FILE: &str = "timeline.json";

/// Every setting that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub labels: LabelRegistry,
    pub backbone: BackboneSpec,
    pub head: HeadSpec,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Head sized for `labels`, initialized from the training seed.
    pub fn new(manifest: PathBuf, labels: LabelRegistry, backbone: BackboneSpec, train: TrainConfig) -> Self {
        let mut head = HeadSpec::new(labels.len());
        head.init_seed = train.seed;
        Self {
            manifest,
            labels,
            backbone,
            head,
            train,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Trains a model as described by `config` into `run_dir`, then evaluates
/// the best checkpoint on the validation split.
pub fn train_run(config: &RunConfig, store: &WeightStore, run_dir: &Path) -> Result<(TrainOutcome, ReportDocument)> {
    let manifest = load_manifest(&config.manifest)?;
    if manifest.registry() != &config.labels {
        return Err(Error::config(format!(
            "manifest labels {:?} differ from configured labels {:?}",
            manifest.registry().names(),
            config.labels.names()
        )));
    }
    fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    write_text(&run_dir.join(CONFIG_FILE), &config.to_json())?;

    let model = TransferModel::assemble_with(&config.backbone, &config.head, store)?.freeze_backbone();
    log::info!(
        "backbone {} ({} frozen parameters), {} trainable head parameters",
        model.backbone().identifier(),
        model.backbone().param_count(),
        model.trainable_param_count()
    );
    let outcome = train(model, &manifest, &config.train, Some(&run_dir.join(MODEL_DIR)))?;
    write_text(&run_dir.join(HISTORY_FILE), &outcome.history.to_json())?;
    emit_curves(&outcome.history, &run_dir.join(CURVES_FILE))?;
    let doc = eval_run(run_dir, &manifest, store)?;
    Ok((outcome, doc))
}

/// Samples a report is computed over: the validation split when the
/// manifest is split, otherwise every sample.
pub fn evaluation_indices(manifest: &DatasetManifest) -> Vec<usize> {
    if manifest.is_split() {
        manifest.indices(Split::Val)
    } else {
        (0..manifest.len()).collect()
    }
}

fn checked_registry(run_labels: &LabelRegistry, manifest: &DatasetManifest) -> Result<()> {
    if manifest.registry() != run_labels {
        return Err(Error::config(format!(
            "run was trained on labels {:?} but the manifest uses {:?}",
            run_labels.names(),
            manifest.registry().names()
        )));
    }
    Ok(())
}

/// Evaluates the checkpoint in `run_dir` and writes `report.json` and
/// `report.txt`.
pub fn eval_run(run_dir: &Path, manifest: &DatasetManifest, store: &WeightStore) -> Result<ReportDocument> {
    let (model, labels) = load_checkpoint(&run_dir.join(MODEL_DIR), store)?;
    checked_registry(&labels, manifest)?;
    let idx = evaluation_indices(manifest);
    if idx.is_empty() {
        return Err(Error::Eval("no samples to evaluate".into()));
    }
    let paths: Vec<PathBuf> = idx.iter().map(|&i| manifest.samples()[i].image_path.clone()).collect();
    let probs = model.predict_features(model.embed_images(&paths)?.view());
    let y_pred: Vec<usize> = probs.rows().into_iter().map(|r| argmax(r.iter())).collect();
    let y_true: Vec<usize> = idx.iter().map(|&i| manifest.samples()[i].label.id()).collect();
    write_report(run_dir, &confusion(&y_true, &y_pred, &labels)?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionLine {
    path: PathBuf,
    label: String,
}

/// Reads `{"path": ..., "label": ...}` lines.
pub fn read_predictions(path: &Path) -> Result<Vec<(PathBuf, String)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let p: PredictionLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((p.path, p.label));
    }
    Ok(out)
}

/// Scores externally supplied predictions against the manifest's labels
/// and writes the report into `out_dir`.
pub fn eval_predictions(
    manifest: &DatasetManifest,
    predictions: &[(PathBuf, String)],
    out_dir: &Path,
) -> Result<ReportDocument> {
    let labels = manifest.registry();
    let truth: HashMap<&Path, usize> = manifest
        .samples()
        .iter()
        .map(|s| (s.image_path.as_path(), s.label.id()))
        .collect();
    let mut y_true = Vec::with_capacity(predictions.len());
    let mut y_pred = Vec::with_capacity(predictions.len());
    for (path, label) in predictions {
        let t = truth
            .get(path.as_path())
            .ok_or_else(|| Error::Eval(format!("{} is not in the manifest", path.display())))?;
        let p = labels
            .by_name(label)
            .ok_or_else(|| Error::Eval(format!("unknown label {label:?}")))?;
        y_true.push(*t);
        y_pred.push(p.id());
    }
    write_report(out_dir, &confusion(&y_true, &y_pred, labels)?)
}

fn write_report(dir: &Path, cm: &ConfusionMatrix) -> Result<ReportDocument> {
    let rep: ClassReport = report(cm)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_text(&dir.join(REPORT_TXT), &render_text(&rep))?;
    let doc = ReportDocument::new(cm, rep);
    write_text(&dir.join(REPORT_JSON), &doc.to_json())?;
    Ok(doc)
}

/// Options for [`predict_run`].
#[derive(Debug, Clone)]
pub struct PredictOptions {
    pub window: usize,
    pub annotate: Vec<usize>,
    /// Registry expected by the caller; must match the model's class count.
    pub labels: Option<LabelRegistry>,
}

/// Writes `timeline.json` and any requested annotated stills into `out_dir`.
pub fn predict_run(
    run_dir: &Path,
    clip: &Path,
    options: &PredictOptions,
    store: &WeightStore,
    out_dir: &Path,
) -> Result<(PredictionTimeline, Vec<PathBuf>)> {
    let (model, stored) = load_checkpoint(&run_dir.join(MODEL_DIR), store)?;
    let labels = options.labels.clone().unwrap_or(stored);
    let clip = ClipRef::probe(clip, None)?;
    let timeline = predict_clip(&model, &labels, &clip, options.window)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_text(&out_dir.join(TIMELINE_FILE), &timeline.to_json())?;
    let stills = annotate_frames(&clip, &timeline, &options.annotate, out_dir)?;
    Ok((timeline, stills))
}
