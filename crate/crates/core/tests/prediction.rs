//! Clip-level prediction and annotated stills.

use std::path::{Path, PathBuf};

use handwash_core::fixtures::{write_clip, FixtureSpec};
use handwash_core::model::{argmax, BackboneSpec, HeadSpec, TransferModel, WeightStore};
use handwash_core::predictor::{annotate_frames, annotated_file_name, predict_clip, DEFAULT_WINDOW};
use handwash_core::video::ClipRef;
use handwash_core::{Error, LabelRegistry};

fn model() -> TransferModel {
    TransferModel::assemble_with(&BackboneSpec::stub(32), &HeadSpec::new(3), &WeightStore::new("/nonexistent"))
        .unwrap()
        .freeze_backbone()
}

fn clip(dir: &Path, frames: usize) -> PathBuf {
    let labels = LabelRegistry::hand_hygiene();
    let spec = FixtureSpec {
        class: labels.by_name("Palm2Palm").unwrap().clone(),
        num_frames: frames,
        height: 48,
        width: 64,
        seed: 11,
    };
    let path = dir.join("wash_a.y4m");
    write_clip(&spec, &path).unwrap();
    path
}

#[test]
fn every_frame_gets_a_normalized_smoothed_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let clip = ClipRef::probe(clip(dir.path(), 40), None).unwrap();
    let tl = predict_clip(&model(), &LabelRegistry::hand_hygiene(), &clip, DEFAULT_WINDOW).unwrap();
    assert_eq!(tl.len(), 40);
    for (i, f) in tl.frames.iter().enumerate() {
        assert_eq!(f.frame_index, i);
        assert!((f.raw_probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((f.smoothed_probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert_eq!(f.label.id(), argmax(&f.smoothed_probs));
    }
}

#[test]
fn window_one_labels_follow_the_raw_argmax() {
    let dir = tempfile::tempdir().unwrap();
    let clip = ClipRef::probe(clip(dir.path(), 12), None).unwrap();
    let tl = predict_clip(&model(), &LabelRegistry::hand_hygiene(), &clip, 1).unwrap();
    for f in &tl.frames {
        assert_eq!(f.smoothed_probs, f.raw_probs);
        assert_eq!(f.label.id(), argmax(&f.raw_probs));
    }
}

#[test]
fn mismatched_registry_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let clip = ClipRef::probe(clip(dir.path(), 3), None).unwrap();
    let two = LabelRegistry::new(["a", "b"]).unwrap();
    assert!(matches!(predict_clip(&model(), &two, &clip, 5), Err(Error::Config(_))));
}

#[test]
fn selected_frames_are_written_as_annotated_stills() {
    let dir = tempfile::tempdir().unwrap();
    let clip = ClipRef::probe(clip(dir.path(), 100), None).unwrap();
    let tl = predict_clip(&model(), &LabelRegistry::hand_hygiene(), &clip, DEFAULT_WINDOW).unwrap();
    let out = dir.path().join("stills");

    let written = annotate_frames(&clip, &tl, &[64, 38, 60], &out).unwrap();
    let expected: Vec<PathBuf> = [38, 60, 64].iter().map(|&i| out.join(annotated_file_name("wash_a", i))).collect();
    assert_eq!(written, expected);
    assert_eq!(annotated_file_name("wash_a", 38), "wash_a_00038_pred.png");
    for p in &written {
        let img = image::open(p).unwrap();
        assert!(img.width() >= 256);
    }

    assert!(annotate_frames(&clip, &tl, &[], &out.join("none")).unwrap().is_empty());
    match annotate_frames(&clip, &tl, &[5, 200], &out) {
        Err(Error::Range { index, frame_count }) => assert_eq!((index, frame_count), (200, 100)),
        other => panic!("expected a range error, got {other:?}"),
    }
}
