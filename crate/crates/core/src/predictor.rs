//! Per-frame clip inference, rolling-average smoothing and frame annotation.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use image::{imageops, Rgb, RgbImage};
use ndarray::Array2;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::labels::{ClassLabel, LabelRegistry};
use crate::model::{argmax, TransferModel};
use crate::preprocess::{preprocess_frame, rgb_to_array};
use crate::render::font::{draw_text, text_width, GLYPH_HEIGHT};
use crate::video::{ClipFrames, ClipRef};

pub const DEFAULT_WINDOW: usize = 25;
/// Annotated stills are upscaled to at least this width.
const ANNOTATION_MIN_WIDTH: u32 = 256;

fn label_name<S: Serializer>(label: &ClassLabel, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(label.name())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FramePrediction {
    pub frame_index: usize,
    pub raw_probs: Vec<f64>,
    pub smoothed_probs: Vec<f64>,
    #[serde(serialize_with = "label_name")]
    pub label: ClassLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct PredictionTimeline {
    pub frames: Vec<FramePrediction>,
}

impl PredictionTimeline {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Pretty JSON array of frame records, newline-terminated.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("timeline serializes") + "\n"
    }

    /// Builds a timeline for frames `0..raw.len()` from raw per-frame
    /// distributions.
    pub fn from_raw(raw: Vec<Vec<f64>>, window: usize, labels: &LabelRegistry) -> Result<Self> {
        if let Some(bad) = raw.iter().find(|r| r.len() != labels.len()) {
            return Err(Error::config(format!(
                "distribution has {} entries but the registry has {} classes",
                bad.len(),
                labels.len()
            )));
        }
        let smoothed = smooth(&raw, window)?;
        let frames = raw
            .into_iter()
            .zip(smoothed)
            .enumerate()
            .map(|(frame_index, (raw_probs, smoothed_probs))| FramePrediction {
                frame_index,
                label: labels.get(argmax(&smoothed_probs)).expect("argmax within registry").clone(),
                raw_probs,
                smoothed_probs,
            })
            .collect();
        Ok(Self { frames })
    }
}

/// Rolling mean over the last `min(t + 1, window)` rows, for every `t`.
pub fn smooth(raw: &[Vec<f64>], window: usize) -> Result<Vec<Vec<f64>>> {
    if window == 0 {
        return Err(Error::config("smoothing window must be at least 1"));
    }
    Ok((0..raw.len())
        .map(|t| {
            let span = &raw[(t + 1).saturating_sub(window)..=t];
            let mut mean = vec![0.0; raw[t].len()];
            for row in span {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= span.len() as f64);
            mean
        })
        .collect())
}

/// Classifies every frame of `clip` and smooths the distributions.
pub fn predict_clip(
    model: &TransferModel,
    labels: &LabelRegistry,
    clip: &ClipRef,
    window: usize,
) -> Result<PredictionTimeline> {
    if labels.len() != model.num_classes() {
        return Err(Error::config(format!(
            "model predicts {} classes but the registry has {}",
            model.num_classes(),
            labels.len()
        )));
    }
    if window == 0 {
        return Err(Error::config("smoothing window must be at least 1"));
    }
    let spec = &model.backbone_spec().input;
    let mut rows = Vec::new();
    for frame in ClipFrames::open(&clip.path)? {
        let input = preprocess_frame(rgb_to_array(&frame?).view(), spec)?;
        rows.push(model.features(input.view())?);
    }
    if rows.is_empty() {
        return Err(Error::EmptyClip(clip.path.clone()));
    }
    let dim = rows[0].len();
    let features = Array2::from_shape_vec((rows.len(), dim), rows.concat()).expect("uniform width");
    let probs = model.predict_features(features.view());
    let raw = probs.rows().into_iter().map(|r| r.to_vec()).collect();
    PredictionTimeline::from_raw(raw, window, labels)
}

/// `{clip_stem}_{frame:05}_pred.png`
pub fn annotated_file_name(clip_stem: &str, frame_index: usize) -> String {
    format!("{clip_stem}_{frame_index:05}_pred.png")
}

/// Writes the selected frames with their smoothed label drawn on a banner.
/// Returns the written paths in ascending frame order.
pub fn annotate_frames(
    clip: &ClipRef,
    timeline: &PredictionTimeline,
    selection: &[usize],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let wanted: BTreeSet<usize> = selection.iter().copied().collect();
    let Some(&last) = wanted.last() else {
        return Ok(Vec::new());
    };
    let frame_count = match clip.frame_count {
        Some(n) => n,
        None => crate::video::count_frames(&clip.path)?,
    };
    if last >= frame_count {
        return Err(Error::Range { index: last, frame_count });
    }
    if last >= timeline.len() {
        return Err(Error::Range {
            index: last,
            frame_count: timeline.len(),
        });
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let stem = clip.stem();
    let mut written = Vec::new();
    for (index, frame) in ClipFrames::open(&clip.path)?.enumerate().take(last + 1) {
        if !wanted.contains(&index) {
            continue;
        }
        let record = &timeline.frames[index];
        let confidence = record.smoothed_probs[record.label.id()];
        let text = format!("#{index} {} {confidence:.2}", record.label.name());
        let img = annotate(&frame?, &text);
        let path = out_dir.join(annotated_file_name(&stem, index));
        img.save_with_format(&path, image::ImageFormat::Png)
            .map_err(|source| Error::Image { path: path.clone(), source })?;
        written.push(path);
    }
    Ok(written)
}

fn annotate(frame: &RgbImage, text: &str) -> RgbImage {
    let factor = ANNOTATION_MIN_WIDTH.div_ceil(frame.width().max(1)).max(1);
    let mut img = if factor > 1 {
        imageops::resize(
            frame,
            frame.width() * factor,
            frame.height() * factor,
            imageops::FilterType::Nearest,
        )
    } else {
        frame.clone()
    };
    let scale = if img.width() >= 480 { 2 } else { 1 };
    let banner = (GLYPH_HEIGHT * scale + 8).min(img.height());
    for y in 0..banner {
        for x in 0..img.width() {
            img.put_pixel(x, y, Rgb([0, 0, 0]));
        }
    }
    let x = ((img.width() as i64 - text_width(text, scale) as i64) / 2).max(4);
    draw_text(&mut img, x, 4, text, scale, Rgb([255, 255, 0]));
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hh() -> LabelRegistry {
        LabelRegistry::hand_hygiene()
    }

    #[test]
    fn window_one_is_identity() {
        let raw = vec![vec![0.2, 0.5, 0.3], vec![0.6, 0.1, 0.3]];
        assert_eq!(smooth(&raw, 1).unwrap(), raw);
    }

    #[test]
    fn alternating_input_ties_to_lowest_class() {
        let raw: Vec<Vec<f64>> = (0..6)
            .map(|t| if t % 2 == 0 { vec![1.0, 0.0, 0.0] } else { vec![0.0, 1.0, 0.0] })
            .collect();
        let tl = PredictionTimeline::from_raw(raw, 2, &hh()).unwrap();
        assert_eq!(tl.frames[0].smoothed_probs, vec![1.0, 0.0, 0.0]);
        for f in &tl.frames[1..] {
            assert_eq!(f.smoothed_probs, vec![0.5, 0.5, 0.0]);
            assert_eq!(f.label.id(), 0);
        }
    }

    #[test]
    fn warm_up_averages_only_seen_frames() {
        let raw = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0], vec![0.0, 1.0]];
        let s = smooth(&raw, 3).unwrap();
        assert_eq!(s[1], vec![0.5, 0.5]);
        assert_eq!(s[2], vec![1.0 / 3.0, 2.0 / 3.0]);
        assert_eq!(s[3], vec![0.0, 1.0]);
    }

    #[test]
    fn zero_window_and_wrong_width_are_config_errors() {
        assert!(matches!(smooth(&[], 0), Err(Error::Config(_))));
        assert!(matches!(
            PredictionTimeline::from_raw(vec![vec![0.5, 0.5]], 3, &hh()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn timeline_json_uses_label_names() {
        let tl = PredictionTimeline::from_raw(vec![vec![0.1, 0.2, 0.7]], 25, &hh()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&tl.to_json()).unwrap();
        assert_eq!(v[0]["label"], "Palm2Palm");
        assert_eq!(v[0]["frame_index"], 0);
        let keys: Vec<_> = v[0].as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["frame_index", "label", "raw_probs", "smoothed_probs"]);
    }

    #[test]
    fn annotation_upscales_and_draws_a_banner() {
        let frame = RgbImage::from_pixel(64, 48, Rgb([90, 90, 90]));
        let img = annotate(&frame, "Linear");
        assert_eq!((img.width(), img.height()), (256, 192));
        assert_eq!(*img.get_pixel(0, 0), Rgb([0, 0, 0]));
        assert!(img.pixels().any(|p| *p == Rgb([255, 255, 0])));
        assert_eq!(*img.get_pixel(10, 150), Rgb([90, 90, 90]));
    }
}
