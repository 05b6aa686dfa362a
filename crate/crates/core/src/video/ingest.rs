use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::jpeg::JpegEncoder;
use image::RgbImage;
use rayon::prelude::*;

use super::decode::{count_frames, is_clip_path, ClipFrames};
use crate::dataset::{DatasetManifest, FrameSample};
use crate::error::{Error, Result};
use crate::labels::{ClassLabel, LabelRegistry};

/// JPEG quality used for extracted stills.
pub const STILL_JPEG_QUALITY: u8 = 95;

const STILL_EXTENSIONS: [&str; 3] = ["jpg", "jpeg", "png"];

/// A gesture clip on disk, optionally labelled by its class directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipRef {
    pub path: PathBuf,
    pub label_hint: Option<ClassLabel>,
    /// Number of decodable frames; `None` until probed.
    pub frame_count: Option<usize>,
}

impl ClipRef {
    pub fn new(path: impl Into<PathBuf>, label_hint: Option<ClassLabel>) -> Self {
        Self {
            path: path.into(),
            label_hint,
            frame_count: None,
        }
    }

    /// Opens the clip and counts its frames.
    pub fn probe(path: impl Into<PathBuf>, label_hint: Option<ClassLabel>) -> Result<Self> {
        let mut clip = Self::new(path, label_hint);
        clip.frame_count = Some(count_frames(&clip.path)?);
        Ok(clip)
    }

    /// File stem used as the source-video id.
    pub fn stem(&self) -> String {
        self.path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

/// `{clip_stem}_{frame_index:05}`
pub fn frame_file_stem(clip_stem: &str, frame_index: usize) -> String {
    format!("{clip_stem}_{frame_index:05}")
}

/// Inverse of [`frame_file_stem`]. Stems without a numeric suffix map to
/// `(stem, 0)`.
pub fn parse_frame_file_stem(stem: &str) -> (String, usize) {
    if let Some((video, idx)) = stem.rsplit_once('_') {
        if !video.is_empty() && !idx.is_empty() && idx.bytes().all(|b| b.is_ascii_digit()) {
            if let Ok(i) = idx.parse() {
                return (video.to_owned(), i);
            }
        }
    }
    (stem.to_owned(), 0)
}

/// Decodes `clip` and writes frames `0, stride, 2·stride, …` as JPEG stills
/// named `{stem}_{index:05}.jpg` into `out_dir`.
pub fn extract_frames(clip: &ClipRef, stride: usize, out_dir: &Path) -> Result<Vec<FrameSample>> {
    if stride == 0 {
        return Err(Error::config("stride must be at least 1"));
    }
    let label = clip.label_hint.clone().ok_or_else(|| {
        Error::config(format!("clip {} has no class label", clip.path.display()))
    })?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let stem = clip.stem();
    let mut samples = Vec::new();
    let mut decoded = 0usize;
    for (index, frame) in ClipFrames::open(&clip.path)?.enumerate() {
        let frame = frame?;
        decoded += 1;
        if index % stride != 0 {
            continue;
        }
        let path = out_dir.join(format!("{}.jpg", frame_file_stem(&stem, index)));
        write_jpeg(&frame, &path)?;
        samples.push(FrameSample {
            image_path: path,
            label: label.clone(),
            source_video: stem.clone(),
            frame_index: index,
        });
    }
    if decoded == 0 {
        return Err(Error::EmptyClip(clip.path.clone()));
    }
    Ok(samples)
}

pub(crate) fn write_jpeg(frame: &RgbImage, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    JpegEncoder::new_with_quality(BufWriter::new(file), STILL_JPEG_QUALITY)
        .encode_image(frame)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Result of scanning a corpus: the manifest plus files that were skipped.
#[derive(Debug, Clone)]
pub struct CorpusScan {
    pub manifest: DatasetManifest,
    pub skipped: Vec<PathBuf>,
}

/// Builds a manifest from `corpus_root/<ClassName>/<stills>`.
///
/// Stills are found recursively under each class directory and ordered
/// lexicographically by path. Files that are not readable images are skipped
/// and reported in [`CorpusScan::skipped`]. Directories for classes outside
/// the registry are ignored.
pub fn build_manifest(corpus_root: &Path, registry: &LabelRegistry) -> Result<CorpusScan> {
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    for label in registry.iter() {
        let class_dir = class_dir(corpus_root, label)?;
        let mut count = 0;
        for path in list_files(&class_dir)? {
            if !is_still_path(&path) || !is_readable_image(&path) {
                log::warn!("skipping non-image file {}", path.display());
                skipped.push(path);
                continue;
            }
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let (source_video, frame_index) = parse_frame_file_stem(&stem);
            samples.push(FrameSample {
                image_path: path,
                label: label.clone(),
                source_video,
                frame_index,
            });
            count += 1;
        }
        if count == 0 {
            return Err(Error::CorpusLayout {
                class: label.name().to_owned(),
                message: format!("no still images under {}", class_dir.display()),
            });
        }
    }
    samples.sort_by(|a, b| a.image_path.cmp(&b.image_path));
    let manifest = DatasetManifest::new(registry.clone(), samples).map_err(|e| match e {
        Error::Config(message) => Error::CorpusLayout {
            class: String::new(),
            message,
        },
        other => other,
    })?;
    Ok(CorpusScan { manifest, skipped })
}

/// Extracts every clip under `clip_root/<ClassName>/` into
/// `out_root/<ClassName>/` and builds the manifest of the resulting stills.
/// Clips are extracted in parallel, one worker per clip.
pub fn extract_corpus(
    clip_root: &Path,
    registry: &LabelRegistry,
    stride: usize,
    out_root: &Path,
) -> Result<CorpusScan> {
    if stride == 0 {
        return Err(Error::config("stride must be at least 1"));
    }
    let mut jobs = Vec::new();
    let mut skipped = Vec::new();
    for label in registry.iter() {
        let dir = class_dir(clip_root, label)?;
        let before = jobs.len();
        for path in list_files(&dir)? {
            if is_clip_path(&path) {
                jobs.push((ClipRef::new(path, Some(label.clone())), out_root.join(label.name())));
            } else {
                log::warn!("skipping non-clip file {}", path.display());
                skipped.push(path);
            }
        }
        if jobs.len() == before {
            return Err(Error::CorpusLayout {
                class: label.name().to_owned(),
                message: format!("no clips under {}", dir.display()),
            });
        }
    }
    jobs.par_iter()
        .map(|(clip, out)| extract_frames(clip, stride, out).map(|_| ()))
        .collect::<Result<Vec<()>>>()?;
    let mut scan = build_manifest(out_root, registry)?;
    skipped.append(&mut scan.skipped);
    scan.skipped = skipped;
    Ok(scan)
}

fn class_dir(root: &Path, label: &ClassLabel) -> Result<PathBuf> {
    let dir = root.join(label.name());
    if !dir.is_dir() {
        return Err(Error::CorpusLayout {
            class: label.name().to_owned(),
            message: format!("missing directory {}", dir.display()),
        });
    }
    Ok(dir)
}

/// All regular files under `dir`, recursively, sorted by path.
fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let mut pending = vec![dir.to_path_buf()];
    while let Some(d) = pending.pop() {
        for entry in fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                pending.push(path);
            } else {
                files.push(path);
            }
        }
    }
    files.sort();
    Ok(files)
}

fn is_still_path(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| STILL_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn is_readable_image(path: &Path) -> bool {
    image::ImageReader::open(path)
        .and_then(|r| r.with_guessed_format())
        .ok()
        .and_then(|r| r.into_dimensions().ok())
        .is_some_and(|(w, h)| w > 0 && h > 0)
}
