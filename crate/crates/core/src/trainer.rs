//! Head training with per-epoch loss and accuracy history.

use std::path::Path;

use image::Rgb;
use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::model::{argmax, cross_entropy, save_checkpoint, TransferModel};
use crate::render::plot::{Chart, Series};

pub const DEFAULT_EPOCHS: usize = 50;
pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    CategoricalCrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            learning_rate: DEFAULT_LEARNING_RATE,
            seed: 0,
            loss: LossKind::CategoricalCrossEntropy,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::config(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Metrics at the end of one epoch. `epoch` counts from 1. Train metrics
/// are measured in evaluation mode over the whole training split, after the
/// epoch's updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn first(&self) -> Option<&EpochRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// Pretty JSON array of epoch records, newline-terminated.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("history serializes") + "\n"
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model after the final epoch.
    pub model: TransferModel,
    pub history: TrainHistory,
    /// Epoch whose head was checkpointed last (best validation accuracy).
    pub best_epoch: usize,
}

/// Loss and accuracy of precomputed features under the current head, in
/// evaluation mode.
pub fn evaluate_features(model: &TransferModel, features: ArrayView2<'_, f64>, targets: &[usize]) -> (f64, f64) {
    let logits = model.head().logits(features);
    let loss = cross_entropy(&logits, targets);
    let correct = logits
        .rows()
        .into_iter()
        .zip(targets)
        .filter(|(row, &t)| argmax(row.iter()) == t)
        .count();
    (loss, correct as f64 / targets.len().max(1) as f64)
}

/// Trains the head on the manifest's training split with minibatch SGD.
///
/// Backbone features are computed once, since the backbone never changes.
/// Each epoch reshuffles the training indices from `config.seed`. When
/// `checkpoint_dir` is given, the model is saved there every time validation
/// accuracy improves.
pub fn train(
    model: TransferModel,
    manifest: &DatasetManifest,
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if !model.is_backbone_frozen() {
        return Err(Error::config("backbone must be frozen before training"));
    }
    if manifest.registry().len() != model.num_classes() {
        return Err(Error::config(format!(
            "manifest has {} classes but the model head has {}",
            manifest.registry().len(),
            model.num_classes()
        )));
    }
    if !manifest.is_split() {
        return Err(Error::TrainData("manifest has no train/val split; run split first".into()));
    }
    let train_idx = manifest.indices(Split::Train);
    let val_idx = manifest.indices(Split::Val);
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::TrainData(format!(
            "both splits must be non-empty (train {}, val {})",
            train_idx.len(),
            val_idx.len()
        )));
    }

    let gather = |idx: &[usize]| -> Result<(Array2<f64>, Vec<usize>)> {
        let paths: Vec<_> = idx.iter().map(|&i| manifest.samples()[i].image_path.clone()).collect();
        let targets = idx.iter().map(|&i| manifest.samples()[i].label.id()).collect();
        Ok((model.embed_images(&paths)?, targets))
    };
    let (train_x, train_y) = gather(&train_idx)?;
    let (val_x, val_y) = gather(&val_idx)?;
    log::info!(
        "training on {} samples, validating on {}, {} features each",
        train_y.len(),
        val_y.len(),
        train_x.ncols()
    );

    let mut model = model;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_y.len()).collect();
    let mut history = TrainHistory::default();
    let mut best: Option<(usize, f64)> = None;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let x = train_x.select(Axis(0), batch);
            let y: Vec<usize> = batch.iter().map(|&i| train_y[i]).collect();
            let grads = model.head().loss_and_gradients(x.view(), &y, Some(&mut rng));
            if !grads.loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            model.head_mut().apply_sgd(&grads.layers, config.learning_rate);
        }
        let (train_loss, train_acc) = evaluate_features(&model, train_x.view(), &train_y);
        let (val_loss, val_acc) = evaluate_features(&model, val_x.view(), &val_y);
        if !(train_loss.is_finite() && val_loss.is_finite()) {
            return Err(Error::Divergence { epoch });
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
        };
        log::debug!("{record:?}");
        history.records.push(record);
        if best.map_or(true, |(_, acc)| val_acc > acc) {
            best = Some((epoch, val_acc));
            if let Some(dir) = checkpoint_dir {
                save_checkpoint(&model, manifest.registry(), dir)?;
            }
        }
    }
    Ok(TrainOutcome {
        model,
        history,
        best_epoch: best.map_or(1, |(e, _)| e),
    })
}

/// Plots train/val loss and accuracy against epoch into a PNG file.
pub fn emit_curves(history: &TrainHistory, out: &Path) -> Result<()> {
    if history.is_empty() {
        return Err(Error::config("cannot plot an empty training history"));
    }
    let series = |name, color, f: fn(&EpochRecord) -> f64| Series {
        name,
        color: Rgb(color),
        points: history.records.iter().map(|r| (r.epoch as f64, f(r))).collect(),
    };
    let chart = Chart {
        title: "Training Loss and Accuracy",
        x_label: "Epoch #",
        y_label: "Loss/Accuracy",
        width: 800,
        height: 500,
    };
    let img = chart.render(&[
        series("train_loss", [31, 119, 180], |r| r.train_loss),
        series("val_loss", [255, 127, 14], |r| r.val_loss),
        series("train_acc", [44, 160, 44], |r| r.train_acc),
        series("val_acc", [214, 39, 40], |r| r.val_acc),
    ]);
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save_with_format(out, image::ImageFormat::Png).map_err(|source| Error::Image {
        path: out.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn history(n: usize) -> TrainHistory {
        TrainHistory {
            records: (1..=n)
                .map(|e| EpochRecord {
                    epoch: e,
                    train_loss: 1.3 / e as f64,
                    train_acc: 1.0 - 0.6 / e as f64,
                    val_loss: 1.2 / e as f64,
                    val_acc: 1.0 - 0.5 / e as f64,
                })
                .collect(),
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert_eq!(TrainConfig::default().epochs, 50);
        for bad in [
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { learning_rate: f64::NAN, ..Default::default() },
            TrainConfig { learning_rate: -1.0, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn history_serializes_as_a_plain_array() {
        let json = history(2).to_json();
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(value.as_array().unwrap().len(), 2);
        assert_eq!(value[0]["epoch"], 1);
        let back: TrainHistory = serde_json::from_str(&json).unwrap();
        assert_eq!(back, history(2));
    }

    #[test]
    fn curves_render_for_long_and_single_epoch_histories() {
        let dir = tempfile::tempdir().unwrap();
        for n in [50, 1] {
            let path = dir.path().join(format!("curves{n}.png"));
            emit_curves(&history(n), &path).unwrap();
            let img = image::open(&path).unwrap();
            assert_eq!((img.width(), img.height()), (800, 500));
        }
    }

    #[test]
    fn empty_history_cannot_be_plotted() {
        let dir = tempfile::tempdir().unwrap();
        let err = emit_curves(&TrainHistory::default(), &dir.path().join("c.png")).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
