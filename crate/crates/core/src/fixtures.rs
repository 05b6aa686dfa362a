//! Deterministic synthetic gesture clips, one motion archetype per class.
//!
//! * `Linear`: one bright blob sweeping left to right.
//! * `Palm2Palm`: two blobs oscillating towards and away from each other.
//! * `FingersInterlaced`: a band of vertical stripes whose upper and lower
//!   halves shift phase in opposite directions.
//!
//! Frames are grayscale replicated to RGB over a uniformly noisy background.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{ClassLabel, LabelRegistry};
use crate::model::{Dense, Head};
use crate::video::{write_gif, write_y4m, ClipRef};

pub const FIXTURE_SIZE: usize = 64;
pub const MIN_FIXTURE_SIZE: usize = 32;
pub const FIXTURE_FPS: usize = 25;
const BACKGROUND_LEVEL: f64 = 40.0;
const NOISE_AMPLITUDE: i32 = 16;
const BLOB_PEAK: f64 = 220.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Archetype {
    Linear,
    Palm2Palm,
    FingersInterlaced,
}

impl Archetype {
    pub fn for_label(label: &ClassLabel) -> Result<Self> {
        match label.name() {
            "Linear" => Ok(Self::Linear),
            "Palm2Palm" => Ok(Self::Palm2Palm),
            "FingersInterlaced" => Ok(Self::FingersInterlaced),
            other => Err(Error::config(format!("no synthetic archetype for class {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureSpec {
    pub class: ClassLabel,
    pub num_frames: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

/// Renders the clip described by `spec`. The result depends only on the
/// spec's fields.
pub fn generate_clip(spec: &FixtureSpec) -> Result<Vec<RgbImage>> {
    let archetype = Archetype::for_label(&spec.class)?;
    if spec.height < MIN_FIXTURE_SIZE || spec.width < MIN_FIXTURE_SIZE {
        return Err(Error::config(format!(
            "fixture frames must be at least {MIN_FIXTURE_SIZE}x{MIN_FIXTURE_SIZE}, got {}x{}",
            spec.height, spec.width
        )));
    }
    if spec.num_frames == 0 {
        return Err(Error::config("fixture clips need at least one frame"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (h, w) = (spec.height as f64, spec.width as f64);
    let n = spec.num_frames;
    let progress = |t: usize| if n > 1 { t as f64 / (n - 1) as f64 } else { 0.0 };
    let tau = std::f64::consts::TAU;

    let pattern: Box<dyn Fn(usize, f64, f64) -> f64> = match archetype {
        Archetype::Linear => {
            let sigma = w * rng.random_range(0.055..0.075);
            let cy = h * rng.random_range(0.3..0.7);
            let x0 = w * rng.random_range(0.12..0.22);
            let x1 = w * rng.random_range(0.78..0.88);
            Box::new(move |t, x, y| blob(x, y, x0 + (x1 - x0) * progress(t), cy, sigma))
        }
        Archetype::Palm2Palm => {
            let sigma = w * rng.random_range(0.055..0.075);
            let cx = w * rng.random_range(0.45..0.55);
            let cy = h * rng.random_range(0.35..0.65);
            let rest = w * 0.22;
            let swing = w * rng.random_range(0.08..0.1);
            let period = rng.random_range(8.0..12.0);
            let phase = rng.random_range(0.0..tau);
            Box::new(move |t, x, y| {
                let half = rest + swing * (tau * t as f64 / period + phase).sin();
                blob(x, y, cx - half, cy, sigma).max(blob(x, y, cx + half, cy, sigma))
            })
        }
        Archetype::FingersInterlaced => {
            let top = h * rng.random_range(0.25..0.32);
            let bottom = h * rng.random_range(0.68..0.75);
            let middle = (top + bottom) / 2.0;
            let wavelength = rng.random_range(6.0..9.0);
            let phase0 = rng.random_range(0.0..tau);
            let period = rng.random_range(8.0..12.0);
            Box::new(move |t, x, y| {
                if y < top || y >= bottom {
                    return 0.0;
                }
                let shift = 1.5 * (tau * t as f64 / period).sin();
                let phase = if y < middle { phase0 + shift } else { phase0 - shift };
                60.0 + 150.0 * (0.5 + 0.5 * (tau * x / wavelength + phase).sin())
            })
        }
    };

    let frames = (0..n)
        .map(|t| {
            RgbImage::from_fn(spec.width as u32, spec.height as u32, |x, y| {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let value = BACKGROUND_LEVEL.max(pattern(t, px, py));
                let noisy = value.round() as i32 + rng.random_range(-NOISE_AMPLITUDE..=NOISE_AMPLITUDE);
                let g = noisy.clamp(0, 255) as u8;
                Rgb([g, g, g])
            })
        })
        .collect();
    Ok(frames)
}

fn blob(x: f64, y: f64, cx: f64, cy: f64, sigma: f64) -> f64 {
    BLOB_PEAK * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * sigma * sigma)).exp()
}

/// Renders the clip and encodes it as `.y4m` or `.gif` according to the
/// extension of `path`.
pub fn write_clip(spec: &FixtureSpec, path: &Path) -> Result<()> {
    let frames = generate_clip(spec)?;
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("y4m") => write_y4m(&frames, FIXTURE_FPS, path),
        Some("gif") => write_gif(&frames, FIXTURE_FPS, path),
        _ => Err(Error::config(format!(
            "fixture clips are written as .y4m or .gif, not {}",
            path.display()
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub per_class: usize,
    pub frames_per_clip: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            per_class: 20,
            frames_per_clip: 30,
            height: FIXTURE_SIZE,
            width: FIXTURE_SIZE,
            seed: 0,
        }
    }
}

/// Seed of clip `index` of class `class_id` in a corpus seeded with `seed`.
pub fn clip_seed(seed: u64, class_id: usize, index: usize) -> u64 {
    seed ^ ((class_id as u64) << 32 | index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Writes `root/<Class>/<Class>_<k>.y4m` for every class and clip index and
/// returns the clips in class, then index, order.
pub fn generate_corpus(root: &Path, labels: &LabelRegistry, spec: &CorpusSpec) -> Result<Vec<ClipRef>> {
    if spec.per_class == 0 {
        return Err(Error::config("per_class must be at least 1"));
    }
    let jobs: Vec<(ClassLabel, usize, PathBuf)> = labels
        .iter()
        .flat_map(|label| {
            let dir = root.join(label.name());
            (0..spec.per_class).map(move |k| {
                let path = dir.join(format!("{}_{k:03}.y4m", label.name()));
                (label.clone(), k, path)
            })
        })
        .collect();
    for label in labels.iter() {
        Archetype::for_label(label)?;
        let dir = root.join(label.name());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    jobs.par_iter().try_for_each(|(label, k, path)| {
        let fixture = FixtureSpec {
            class: label.clone(),
            num_frames: spec.frames_per_clip,
            height: spec.height,
            width: spec.width,
            seed: clip_seed(spec.seed, label.id(), *k),
        };
        write_clip(&fixture, path)
    })?;
    Ok(jobs
        .into_iter()
        .map(|(label, _, path)| {
            let mut clip = ClipRef::new(path, Some(label));
            clip.frame_count = Some(spec.frames_per_clip);
            clip
        })
        .collect())
}

/// Training accuracy of a multinomial logistic regression fitted by
/// full-batch gradient descent on z-scored `features`. Values near 1 mean
/// the classes are linearly separable in that feature space.
pub fn linear_probe_accuracy(features: ArrayView2<'_, f64>, targets: &[usize], num_classes: usize) -> f64 {
    const STEPS: usize = 400;
    const LEARNING_RATE: f64 = 0.5;
    let (n, d) = features.dim();
    if n == 0 {
        return 0.0;
    }
    let mean = features.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let std = features.std_axis(ndarray::Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
    let x = (&features - &mean) / &std;
    let mut head = Head::from_layers(
        vec![Dense {
            weight: Array2::zeros((d, num_classes)),
            bias: ndarray::Array1::zeros(num_classes),
        }],
        0.0,
    )
    .expect("single layer head");
    for _ in 0..STEPS {
        let g = head.loss_and_gradients(x.view(), targets, None);
        head.apply_sgd(&g.layers, LEARNING_RATE);
    }
    let probs = head.predict(x.view());
    let correct = probs
        .rows()
        .into_iter()
        .zip(targets)
        .filter(|(row, &t)| crate::model::argmax(row.iter()) == t)
        .count();
    correct as f64 / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(name: &str, frames: usize, seed: u64) -> FixtureSpec {
        let labels = LabelRegistry::hand_hygiene();
        FixtureSpec {
            class: labels.by_name(name).unwrap().clone(),
            num_frames: frames,
            height: FIXTURE_SIZE,
            width: FIXTURE_SIZE,
            seed,
        }
    }

    /// Intensity-weighted centroid column of pixels brighter than 128.
    fn bright_centroid_x(img: &RgbImage) -> f64 {
        let (mut sum, mut mass) = (0.0, 0.0);
        for (x, _, p) in img.enumerate_pixels() {
            let v = (p[0] as f64 - 128.0).max(0.0);
            sum += v * x as f64;
            mass += v;
        }
        sum / mass
    }

    /// Distance between the centres of the two runs of columns that contain
    /// a bright pixel.
    fn blob_gap(img: &RgbImage) -> f64 {
        let lit: Vec<bool> = (0..img.width())
            .map(|x| (0..img.height()).any(|y| img.get_pixel(x, y)[0] > 150))
            .collect();
        let mut runs = Vec::new();
        let mut start = None;
        for (x, &on) in lit.iter().chain([&false]).enumerate() {
            match (on, start) {
                (true, None) => start = Some(x),
                (false, Some(s)) => {
                    runs.push((s + x - 1) as f64 / 2.0);
                    start = None;
                }
                _ => {}
            }
        }
        assert_eq!(runs.len(), 2, "expected two blobs, found {runs:?}");
        runs[1] - runs[0]
    }

    #[test]
    fn same_spec_same_frames() {
        for name in ["Linear", "Palm2Palm", "FingersInterlaced"] {
            let a = generate_clip(&spec(name, 5, 3)).unwrap();
            assert_eq!(a, generate_clip(&spec(name, 5, 3)).unwrap());
            assert_ne!(a, generate_clip(&spec(name, 5, 4)).unwrap());
        }
    }

    #[test]
    fn frame_count_and_geometry() {
        let frames = generate_clip(&spec("Linear", 30, 0)).unwrap();
        assert_eq!(frames.len(), 30);
        assert!(frames.iter().all(|f| f.dimensions() == (64, 64)));
        assert!(frames[0].pixels().all(|p| p[0] == p[1] && p[1] == p[2]));
    }

    #[test]
    fn linear_blob_moves_strictly_right() {
        for seed in 0..10 {
            let frames = generate_clip(&spec("Linear", 30, seed)).unwrap();
            let xs: Vec<f64> = frames.iter().map(bright_centroid_x).collect();
            assert!(xs.windows(2).all(|p| p[1] > p[0]), "seed {seed}: {xs:?}");
        }
    }

    #[test]
    fn palm_blobs_approach_and_separate() {
        for seed in 0..10 {
            let frames = generate_clip(&spec("Palm2Palm", 30, seed)).unwrap();
            let gaps: Vec<f64> = frames.iter().map(blob_gap).collect();
            let rising = gaps.windows(2).any(|p| p[1] > p[0]);
            let falling = gaps.windows(2).any(|p| p[1] < p[0]);
            assert!(rising && falling, "seed {seed}: {gaps:?}");
        }
    }

    #[test]
    fn stripes_shift_between_frames() {
        let frames = generate_clip(&spec("FingersInterlaced", 6, 1)).unwrap();
        assert_ne!(frames[0].get_pixel(0, 32), frames[0].get_pixel(3, 32));
        let row = |f: &RgbImage, y: u32| (0..64).map(|x| f.get_pixel(x, y)[0] as i32).collect::<Vec<_>>();
        assert_ne!(row(&frames[0], 30), row(&frames[3], 30));
    }

    #[test]
    fn degenerate_specs_are_config_errors() {
        let mut s = spec("Linear", 5, 0);
        s.width = 31;
        assert!(matches!(generate_clip(&s), Err(Error::Config(_))));
        let mut s = spec("Linear", 0, 0);
        s.num_frames = 0;
        assert!(matches!(generate_clip(&s), Err(Error::Config(_))));
        let other = LabelRegistry::new(["Circular"]).unwrap();
        let s = FixtureSpec { class: other.get(0).unwrap().clone(), ..spec("Linear", 5, 0) };
        assert!(matches!(generate_clip(&s), Err(Error::Config(_))));
    }

    #[test]
    fn corpus_layout_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        let labels = LabelRegistry::hand_hygiene();
        let corpus = CorpusSpec { per_class: 2, frames_per_clip: 10, ..Default::default() };
        let clips = generate_corpus(dir.path(), &labels, &corpus).unwrap();
        assert_eq!(clips.len(), 6);
        let mut total = 0;
        for clip in &clips {
            assert!(clip.path.starts_with(dir.path().join(clip.label_hint.as_ref().unwrap().name())));
            total += crate::video::count_frames(&clip.path).unwrap();
        }
        assert_eq!(total, 60);
    }

    #[test]
    fn probe_separates_trivially_separable_points() {
        let x = Array2::from_shape_fn((30, 2), |(i, j)| ((i % 3) as f64) * if j == 0 { 1.0 } else { -2.0 } + (i as f64) * 1e-3);
        let y: Vec<usize> = (0..30).map(|i| i % 3).collect();
        assert_eq!(linear_probe_accuracy(x.view(), &y, 3), 1.0);
    }
}
