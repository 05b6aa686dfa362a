use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::resnet::{ResNet50, RESNET50_FEATURE_DIM};
use crate::error::{Error, Result};
use crate::preprocess::{PreprocessSpec, BACKBONE_INPUT_SIZE};

/// Environment variable naming the pretrained-weight cache root.
pub const CACHE_ENV: &str = "HANDWASH_CACHE";
/// File name of the ResNet-50 trunk weights inside the cache root.
pub const RESNET50_WEIGHTS_FILE: &str = "resnet50_imagenet_notop.safetensors";

/// Seed of the stub projection. Fixed so every stub of a given width is the
/// same extractor.
pub const STUB_SEED: u64 = 0x5EED_F00D;
/// Default stub feature width.
pub const STUB_FEATURE_DIM: usize = 128;
/// The stub pools its input into a `STUB_GRID × STUB_GRID` grid of cells.
pub const STUB_GRID: usize = 14;
const STUB_INPUT_SCALE: f64 = 1.0 / 128.0;
const STUB_GAIN: f64 = 3.0;
const STUB_BIAS_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    PretrainedResnet50,
    Stub,
}

impl std::str::FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "resnet50" | "pretrained_resnet50" => Ok(Self::PretrainedResnet50),
            "stub" => Ok(Self::Stub),
            other => Err(Error::config(format!(
                "unknown backbone {other:?} (expected resnet50 or stub)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub kind: BackboneKind,
    pub feature_dim: usize,
    pub input: PreprocessSpec,
}

impl BackboneSpec {
    pub fn resnet50() -> Self {
        Self {
            kind: BackboneKind::PretrainedResnet50,
            feature_dim: RESNET50_FEATURE_DIM,
            input: PreprocessSpec::imagenet(),
        }
    }

    pub fn stub(feature_dim: usize) -> Self {
        Self {
            kind: BackboneKind::Stub,
            feature_dim,
            input: PreprocessSpec::imagenet(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.input.validate()?;
        match self.kind {
            BackboneKind::PretrainedResnet50 => {
                if self.feature_dim != RESNET50_FEATURE_DIM
                    || self.input.target_height != BACKBONE_INPUT_SIZE
                    || self.input.target_width != BACKBONE_INPUT_SIZE
                {
                    return Err(Error::config(format!(
                        "pretrained_resnet50 requires feature_dim {RESNET50_FEATURE_DIM} and \
                         {BACKBONE_INPUT_SIZE}x{BACKBONE_INPUT_SIZE} input"
                    )));
                }
            }
            BackboneKind::Stub => {
                if self.feature_dim == 0 {
                    return Err(Error::config("stub feature_dim must be positive"));
                }
                if self.input.target_height < STUB_GRID || self.input.target_width < STUB_GRID {
                    return Err(Error::config(format!(
                        "stub input must be at least {STUB_GRID}x{STUB_GRID}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Where pretrained weights are looked up. Nothing is ever downloaded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightStore {
    root: PathBuf,
}

impl WeightStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// `$HANDWASH_CACHE`, falling back to `$HOME/.cache/handwash`.
    pub fn from_env() -> Self {
        let root = std::env::var_os(CACHE_ENV)
            .map(PathBuf::from)
            .or_else(|| {
                std::env::var_os("HOME").map(|h| PathBuf::from(h).join(".cache").join("handwash"))
            })
            .unwrap_or_else(|| PathBuf::from(".handwash-cache"));
        Self { root }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn resnet50_path(&self) -> PathBuf {
        self.root.join(RESNET50_WEIGHTS_FILE)
    }
}

/// Deterministic stand-in extractor: cell-average pooling of the
/// preprocessed image, a fixed Gaussian projection, then ReLU.
#[derive(Debug, Clone)]
pub struct StubBackbone {
    projection: Array2<f64>,
    bias: Array1<f64>,
}

impl StubBackbone {
    pub fn new(feature_dim: usize) -> Self {
        let in_dim = STUB_GRID * STUB_GRID * 3;
        let mut rng = ChaCha8Rng::seed_from_u64(STUB_SEED);
        let w = Normal::new(0.0, STUB_GAIN / (in_dim as f64).sqrt()).expect("valid std");
        let b = Normal::new(0.0, STUB_BIAS_STD).expect("valid std");
        let projection = Array2::from_shape_simple_fn((in_dim, feature_dim), || w.sample(&mut rng));
        let bias = Array1::from_shape_simple_fn(feature_dim, || b.sample(&mut rng));
        Self { projection, bias }
    }

    pub fn feature_dim(&self) -> usize {
        self.bias.len()
    }

    pub fn features(&self, image: ArrayView3<'_, f32>) -> Result<Vec<f64>> {
        let (h, w, c) = image.dim();
        if c != 3 || h < STUB_GRID || w < STUB_GRID {
            return Err(Error::Shape {
                expected: format!("H×W×3 with H, W ≥ {STUB_GRID}"),
                actual: format!("{h}×{w}×{c}"),
            });
        }
        let mut pooled = Array1::<f64>::zeros(STUB_GRID * STUB_GRID * 3);
        for gy in 0..STUB_GRID {
            let (y0, y1) = (gy * h / STUB_GRID, (gy + 1) * h / STUB_GRID);
            for gx in 0..STUB_GRID {
                let (x0, x1) = (gx * w / STUB_GRID, (gx + 1) * w / STUB_GRID);
                let area = ((y1 - y0) * (x1 - x0)) as f64;
                for ch in 0..3 {
                    let mut sum = 0.0f64;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            sum += image[[y, x, ch]] as f64;
                        }
                    }
                    pooled[(gy * STUB_GRID + gx) * 3 + ch] = sum / area * STUB_INPUT_SCALE;
                }
            }
        }
        let z = pooled.dot(&self.projection) + &self.bias;
        Ok(z.iter().map(|v| v.max(0.0)).collect())
    }

    fn param_count(&self) -> usize {
        self.projection.len() + self.bias.len()
    }

    fn checksum(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for v in self.projection.iter().chain(self.bias.iter()) {
            hasher.update(v.to_le_bytes());
        }
        hasher.finalize().into()
    }
}

/// A loaded feature extractor. Parameters are never mutated after loading.
#[derive(Debug, Clone)]
pub enum Backbone {
    Stub(StubBackbone),
    ResNet50(Arc<ResNet50>),
}

impl Backbone {
    pub fn load(spec: &BackboneSpec, store: &WeightStore) -> Result<Self> {
        spec.validate()?;
        match spec.kind {
            BackboneKind::Stub => Ok(Self::Stub(StubBackbone::new(spec.feature_dim))),
            BackboneKind::PretrainedResnet50 => {
                let path = store.resnet50_path();
                Ok(Self::ResNet50(Arc::new(ResNet50::load(&path)?)))
            }
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            Self::Stub(s) => s.feature_dim(),
            Self::ResNet50(_) => RESNET50_FEATURE_DIM,
        }
    }

    pub fn features(&self, image: ArrayView3<'_, f32>) -> Result<Vec<f64>> {
        match self {
            Self::Stub(s) => s.features(image),
            Self::ResNet50(r) => Ok(r.features(image)?.into_iter().map(f64::from).collect()),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Self::Stub(s) => s.param_count(),
            Self::ResNet50(r) => r.param_count(),
        }
    }

    /// SHA-256 over all backbone parameters, recomputed on every call.
    pub fn checksum(&self) -> [u8; 32] {
        match self {
            Self::Stub(s) => s.checksum(),
            Self::ResNet50(r) => r.checksum(),
        }
    }

    pub fn identifier(&self) -> String {
        match self {
            Self::Stub(s) => format!("stub-v1-d{}", s.feature_dim()),
            Self::ResNet50(_) => "resnet50-imagenet-notop".to_owned(),
        }
    }

    /// Pure per-sample extraction, so rayon is only worth it for the deep
    /// trunk.
    pub(crate) fn is_expensive(&self) -> bool {
        matches!(self, Self::ResNet50(_))
    }
}

#[cfg(test)]
mod tests {
    use ndarray::Array3;

    use super::*;

    #[test]
    fn stub_is_deterministic_per_width() {
        let a = StubBackbone::new(64);
        let b = StubBackbone::new(64);
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a.checksum(), StubBackbone::new(32).checksum());
        let img = Array3::from_shape_fn((224, 224, 3), |(y, x, c)| (y + 2 * x + c) as f32 % 50.0 - 25.0);
        assert_eq!(a.features(img.view()).unwrap(), b.features(img.view()).unwrap());
        assert_eq!(a.features(img.view()).unwrap().len(), 64);
    }

    #[test]
    fn stub_features_are_non_negative() {
        let s = StubBackbone::new(50);
        let img = Array3::from_shape_fn((30, 20, 3), |(y, x, _)| (y as f32 - x as f32) * 3.0);
        assert!(s.features(img.view()).unwrap().iter().all(|v| *v >= 0.0));
        assert!(matches!(s.features(Array3::zeros((8, 8, 3)).view()), Err(Error::Shape { .. })));
    }

    #[test]
    fn spec_validation() {
        assert!(BackboneSpec::resnet50().validate().is_ok());
        assert!(BackboneSpec::stub(64).validate().is_ok());
        assert!(BackboneSpec::stub(0).validate().is_err());
        let mut bad = BackboneSpec::resnet50();
        bad.feature_dim = 1000;
        assert!(bad.validate().is_err());
        let mut small = BackboneSpec::resnet50();
        small.input.target_width = 128;
        assert!(small.validate().is_err());
    }

    #[test]
    fn resnet_without_cached_weights_is_unavailable() {
        let dir = tempfile::tempdir().unwrap();
        let store = WeightStore::new(dir.path());
        assert!(matches!(
            Backbone::load(&BackboneSpec::resnet50(), &store),
            Err(Error::WeightsUnavailable(_))
        ));
    }

    #[test]
    fn backbone_kind_parses_cli_names() {
        assert_eq!("stub".parse::<BackboneKind>().unwrap(), BackboneKind::Stub);
        assert_eq!("resnet50".parse::<BackboneKind>().unwrap(), BackboneKind::PretrainedResnet50);
        assert!("xception".parse::<BackboneKind>().is_err());
        assert_eq!(
            serde_json::to_string(&BackboneKind::PretrainedResnet50).unwrap(),
            "\"pretrained_resnet50\""
        );
    }
}
