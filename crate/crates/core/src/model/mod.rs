//! Transfer model: a frozen feature backbone with a trainable head on top.

mod backbone;
mod checkpoint;
mod head;
mod resnet;
mod tensor_file;

use std::path::PathBuf;

use ndarray::{Array2, ArrayView2, ArrayView3, ArrayView4, Axis};
use rayon::prelude::*;

pub use backbone::{
    Backbone, BackboneKind, BackboneSpec, StubBackbone, WeightStore, CACHE_ENV,
    RESNET50_WEIGHTS_FILE, STUB_FEATURE_DIM, STUB_GRID, STUB_SEED,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, ModelCard, CHECKPOINT_FORMAT_VERSION};
pub use head::{
    argmax, cross_entropy, softmax_rows, Dense, Head, HeadGradients, HeadSpec, DEFAULT_DROPOUT,
    DEFAULT_HIDDEN_SIZE,
};
pub use resnet::{ResNet50, RESNET50_FEATURE_DIM};
pub use tensor_file::{
    decode_tensors, encode_tensors, read_tensor_file, write_tensor_file, Tensor, TensorData,
};

use crate::error::{Error, Result};
use crate::preprocess::{load_rgb, preprocess_frame};

/// A named group of parameters sharing one trainable flag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamGroup {
    pub name: String,
    pub count: usize,
    pub trainable: bool,
}

#[derive(Debug, Clone)]
pub struct TransferModel {
    backbone_spec: BackboneSpec,
    backbone: Backbone,
    head_spec: HeadSpec,
    head: Head,
    backbone_frozen: bool,
}

impl TransferModel {
    /// Loads the backbone from the default weight store and attaches a fresh
    /// head. The backbone starts unfrozen; call [`Self::freeze_backbone`].
    pub fn assemble(backbone: &BackboneSpec, head: &HeadSpec) -> Result<Self> {
        Self::assemble_with(backbone, head, &WeightStore::from_env())
    }

    pub fn assemble_with(backbone: &BackboneSpec, head: &HeadSpec, store: &WeightStore) -> Result<Self> {
        let loaded = Backbone::load(backbone, store)?;
        Self::from_parts(backbone.clone(), loaded, head.clone(), Head::init(backbone.feature_dim, head)?)
    }

    pub(crate) fn from_parts(
        backbone_spec: BackboneSpec,
        backbone: Backbone,
        head_spec: HeadSpec,
        head: Head,
    ) -> Result<Self> {
        head_spec.validate()?;
        if backbone.feature_dim() != backbone_spec.feature_dim || head.input_dim() != backbone_spec.feature_dim {
            return Err(Error::config(format!(
                "backbone emits {} features but the head expects {}",
                backbone.feature_dim(),
                head.input_dim()
            )));
        }
        if head.num_classes() != head_spec.num_classes {
            return Err(Error::config("head layers disagree with head spec"));
        }
        Ok(Self {
            backbone_spec,
            backbone,
            head_spec,
            head,
            backbone_frozen: false,
        })
    }

    /// Marks every backbone parameter non-trainable. Idempotent.
    pub fn freeze_backbone(mut self) -> Self {
        self.backbone_frozen = true;
        self
    }

    pub fn is_backbone_frozen(&self) -> bool {
        self.backbone_frozen
    }

    pub fn trainable_mask(&self) -> Vec<ParamGroup> {
        let mut groups = vec![ParamGroup {
            name: "backbone".to_owned(),
            count: self.backbone.param_count(),
            trainable: !self.backbone_frozen,
        }];
        for (i, layer) in self.head.layers().iter().enumerate() {
            groups.push(ParamGroup {
                name: format!("head.dense{i}.weight"),
                count: layer.weight.len(),
                trainable: true,
            });
            groups.push(ParamGroup {
                name: format!("head.dense{i}.bias"),
                count: layer.bias.len(),
                trainable: true,
            });
        }
        groups
    }

    pub fn trainable_param_count(&self) -> usize {
        self.trainable_mask().iter().filter(|g| g.trainable).map(|g| g.count).sum()
    }

    pub fn backbone_spec(&self) -> &BackboneSpec {
        &self.backbone_spec
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn head_spec(&self) -> &HeadSpec {
        &self.head_spec
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub(crate) fn head_mut(&mut self) -> &mut Head {
        &mut self.head
    }

    pub fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    pub fn backbone_checksum(&self) -> [u8; 32] {
        self.backbone.checksum()
    }

    /// Backbone features of one preprocessed `H×W×3` input.
    pub fn features(&self, input: ArrayView3<'_, f32>) -> Result<Vec<f64>> {
        let (h, w, c) = input.dim();
        let spec = &self.backbone_spec.input;
        if (h, w, c) != (spec.target_height, spec.target_width, 3) {
            return Err(Error::Shape {
                expected: format!("{}×{}×3", spec.target_height, spec.target_width),
                actual: format!("{h}×{w}×{c}"),
            });
        }
        self.backbone.features(input)
    }

    /// Evaluation-mode class probabilities for a `B×H×W×3` batch.
    pub fn forward(&self, batch: ArrayView4<'_, f32>) -> Result<Array2<f64>> {
        let rows = self.map_samples(batch.axis_iter(Axis(0)).collect(), |x| self.features(x))?;
        Ok(self.head.predict(stack_rows(&rows, self.backbone_spec.feature_dim).view()))
    }

    /// Head probabilities for precomputed features.
    pub fn predict_features(&self, features: ArrayView2<'_, f64>) -> Array2<f64> {
        self.head.predict(features)
    }

    /// Loads, preprocesses and embeds every image, returning one feature row
    /// per path in input order.
    pub fn embed_images(&self, paths: &[PathBuf]) -> Result<Array2<f64>> {
        let rows = self.map_samples(paths.iter().collect(), |p| {
            let raster = load_rgb(p)?;
            let input = preprocess_frame(raster.view(), &self.backbone_spec.input)?;
            self.backbone.features(input.view())
        })?;
        Ok(stack_rows(&rows, self.backbone_spec.feature_dim))
    }

    fn map_samples<T, F>(&self, items: Vec<T>, f: F) -> Result<Vec<Vec<f64>>>
    where
        T: Send,
        F: Fn(T) -> Result<Vec<f64>> + Sync + Send,
    {
        if self.backbone.is_expensive() {
            items.into_par_iter().map(f).collect()
        } else {
            items.into_iter().map(f).collect()
        }
    }
}

fn stack_rows(rows: &[Vec<f64>], width: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), width));
    for (mut dst, src) in out.rows_mut().into_iter().zip(rows) {
        dst.assign(&ArrayView2::from_shape((1, width), src).expect("feature width").row(0));
    }
    out
}
