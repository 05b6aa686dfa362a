//! Per-frame dataset records, the manifest that groups them, and the
//! train/validation split.

mod io;
mod split;

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{ClassLabel, LabelRegistry};

pub use io::{load_manifest, read_manifest, save_manifest, write_manifest, MANIFEST_VERSION};
pub use split::{make_split, stratum_val_count, DEFAULT_VAL_FRACTION};

/// One still frame extracted from a gesture clip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameSample {
    pub image_path: PathBuf,
    pub label: ClassLabel,
    pub source_video: String,
    pub frame_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

/// Immutable collection of frame samples over a label registry, with an
/// optional split assignment per sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    registry: LabelRegistry,
    samples: Vec<FrameSample>,
    splits: Vec<Option<Split>>,
}

impl DatasetManifest {
    /// Builds an unsplit manifest. Every label must belong to `registry` and
    /// `(source_video, frame_index)` pairs must be unique.
    pub fn new(registry: LabelRegistry, samples: Vec<FrameSample>) -> Result<Self> {
        let n = samples.len();
        Self::with_splits(registry, samples, vec![None; n])
    }

    pub fn with_splits(
        registry: LabelRegistry,
        samples: Vec<FrameSample>,
        splits: Vec<Option<Split>>,
    ) -> Result<Self> {
        if splits.len() != samples.len() {
            return Err(Error::config(format!(
                "{} split assignments for {} samples",
                splits.len(),
                samples.len()
            )));
        }
        let assigned = splits.iter().filter(|s| s.is_some()).count();
        if assigned != 0 && assigned != splits.len() {
            return Err(Error::config(
                "split assignment must cover every sample or none",
            ));
        }
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if !registry.contains(&s.label) {
                return Err(Error::config(format!(
                    "sample {} has label {:?} outside the registry",
                    s.image_path.display(),
                    s.label.name()
                )));
            }
            if !seen.insert((s.source_video.as_str(), s.frame_index)) {
                return Err(Error::config(format!(
                    "duplicate frame {} of video {:?}",
                    s.frame_index, s.source_video
                )));
            }
        }
        Ok(Self {
            registry,
            samples,
            splits,
        })
    }

    pub fn registry(&self) -> &LabelRegistry {
        &self.registry
    }

    pub fn samples(&self) -> &[FrameSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split_of(&self, index: usize) -> Option<Split> {
        self.splits.get(index).copied().flatten()
    }

    pub fn is_split(&self) -> bool {
        !self.splits.is_empty() && self.splits.iter().all(Option::is_some)
    }

    /// Indices of samples assigned to `split`, in manifest order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == Some(split))
            .map(|(i, _)| i)
            .collect()
    }

    /// Number of samples per class id.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.registry.len()];
        for s in &self.samples {
            counts[s.label.id()] += 1;
        }
        counts
    }

    pub(crate) fn assign(&self, splits: Vec<Option<Split>>) -> Self {
        debug_assert_eq!(splits.len(), self.samples.len());
        Self {
            registry: self.registry.clone(),
            samples: self.samples.clone(),
            splits,
        }
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// Manifest with `counts[c]` samples of class `c`, one video per class.
    pub fn manifest_with_counts(counts: &[usize]) -> DatasetManifest {
        let names: Vec<String> = (0..counts.len()).map(|c| format!("class{c}")).collect();
        let registry = LabelRegistry::new(names).unwrap();
        let mut samples = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            let label = registry.get(c).unwrap().clone();
            for f in 0..n {
                samples.push(FrameSample {
                    image_path: PathBuf::from(format!("/data/class{c}/v{c}_{f:05}.jpg")),
                    label: label.clone(),
                    source_video: format!("v{c}"),
                    frame_index: f,
                });
            }
        }
        DatasetManifest::new(registry, samples).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::manifest_with_counts;
    use super::*;

    #[test]
    fn rejects_foreign_labels() {
        let reg = LabelRegistry::hand_hygiene();
        let foreign = LabelRegistry::new(["Circular"]).unwrap();
        let sample = FrameSample {
            image_path: "x.jpg".into(),
            label: foreign.get(0).unwrap().clone(),
            source_video: "v".into(),
            frame_index: 0,
        };
        assert!(matches!(
            DatasetManifest::new(reg, vec![sample]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn rejects_duplicate_frames_per_video() {
        let m = manifest_with_counts(&[2]);
        let mut samples = m.samples().to_vec();
        samples[1].frame_index = 0;
        assert!(DatasetManifest::new(m.registry().clone(), samples).is_err());
    }

    #[test]
    fn rejects_partial_split() {
        let m = manifest_with_counts(&[2]);
        let r = DatasetManifest::with_splits(
            m.registry().clone(),
            m.samples().to_vec(),
            vec![Some(Split::Train), None],
        );
        assert!(r.is_err());
    }

    #[test]
    fn class_counts_follow_registry_order() {
        assert_eq!(manifest_with_counts(&[3, 0, 5]).class_counts(), vec![3, 0, 5]);
    }
}
