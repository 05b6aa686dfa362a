//! Model checkpoints: `model.json` (specs, backbone identity, labels) plus
//! `head.safetensors` (head parameters). The backbone itself is not copied;
//! it is reloaded from its spec and verified against the stored checksum.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::backbone::{Backbone, BackboneSpec, WeightStore};
use super::head::{Dense, Head, HeadSpec};
use super::tensor_file::{read_tensor_file, write_tensor_file, Tensor, TensorData};
use super::TransferModel;
use crate::error::{Error, Result};
use crate::labels::LabelRegistry;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const CARD_FILE: &str = "model.json";
const HEAD_FILE: &str = "head.safetensors";

/// Contents of `model.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCard {
    pub format_version: u32,
    pub backbone: BackboneSpec,
    pub backbone_identifier: String,
    pub backbone_checksum: String,
    pub head: HeadSpec,
    pub labels: LabelRegistry,
}

pub fn save_checkpoint(model: &TransferModel, labels: &LabelRegistry, dir: &Path) -> Result<()> {
    if labels.len() != model.num_classes() {
        return Err(Error::config(format!(
            "model has {} classes but the registry has {}",
            model.num_classes(),
            labels.len()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let card = ModelCard {
        format_version: CHECKPOINT_FORMAT_VERSION,
        backbone: model.backbone_spec().clone(),
        backbone_identifier: model.backbone().identifier(),
        backbone_checksum: hex::encode(model.backbone_checksum()),
        head: model.head_spec().clone(),
        labels: labels.clone(),
    };
    let mut tensors = BTreeMap::new();
    for (i, layer) in model.head().layers().iter().enumerate() {
        let (rows, cols) = layer.weight.dim();
        tensors.insert(
            format!("dense{i}.weight"),
            Tensor::f64(vec![rows, cols], layer.weight.iter().copied().collect()),
        );
        tensors.insert(format!("dense{i}.bias"), Tensor::f64(vec![cols], layer.bias.to_vec()));
    }
    write_tensor_file(&dir.join(HEAD_FILE), &tensors)?;
    let card_path = dir.join(CARD_FILE);
    let json = serde_json::to_string_pretty(&card)?;
    fs::write(&card_path, json + "\n").map_err(|e| Error::io(&card_path, e))
}

/// Rebuilds the model saved in `dir`, with its backbone frozen.
pub fn load_checkpoint(dir: &Path, store: &WeightStore) -> Result<(TransferModel, LabelRegistry)> {
    let card_path = dir.join(CARD_FILE);
    let text = fs::read_to_string(&card_path).map_err(|e| Error::io(&card_path, e))?;
    let card: ModelCard =
        serde_json::from_str(&text).map_err(|e| Error::decode(&card_path, e))?;
    if card.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::config(format!(
            "unsupported checkpoint format version {}",
            card.format_version
        )));
    }
    if card.labels.len() != card.head.num_classes {
        return Err(Error::config(format!(
            "checkpoint head has {} classes but its registry has {}",
            card.head.num_classes,
            card.labels.len()
        )));
    }
    let backbone = Backbone::load(&card.backbone, store)?;
    if hex::encode(backbone.checksum()) != card.backbone_checksum {
        return Err(Error::config(format!(
            "backbone {} does not match the checksum recorded in {}",
            backbone.identifier(),
            card_path.display()
        )));
    }
    let head_path = dir.join(HEAD_FILE);
    let tensors = read_tensor_file(&head_path)?;
    let layer_count = card.head.hidden_sizes.len() + 1;
    let mut layers = Vec::with_capacity(layer_count);
    for i in 0..layer_count {
        let weight = tensors.get(&format!("dense{i}.weight"));
        let bias = tensors.get(&format!("dense{i}.bias"));
        let (
            Some(Tensor { shape: ws, data: TensorData::F64(w) }),
            Some(Tensor { shape: bs, data: TensorData::F64(b) }),
        ) = (weight, bias)
        else {
            return Err(Error::decode(&head_path, format!("missing or non-F64 tensors for dense{i}")));
        };
        if ws.len() != 2 || bs.len() != 1 {
            return Err(Error::decode(&head_path, format!("dense{i} tensors have the wrong rank")));
        }
        layers.push(Dense {
            weight: Array2::from_shape_vec((ws[0], ws[1]), w.clone())
                .map_err(|e| Error::decode(&head_path, e))?,
            bias: Array1::from(b.clone()),
        });
    }
    let head = Head::from_layers(layers, card.head.dropout_rate)?;
    let model = TransferModel::from_parts(card.backbone, backbone, card.head, head)?.freeze_backbone();
    Ok((model, card.labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BackboneKind;
    use crate::preprocess::PreprocessSpec;

    fn model() -> TransferModel {
        let mut spec = BackboneSpec::stub(12);
        spec.input = PreprocessSpec {
            target_height: 20,
            target_width: 20,
            ..PreprocessSpec::imagenet()
        };
        let head = HeadSpec {
            hidden_sizes: vec![6],
            dropout_rate: 0.5,
            num_classes: 3,
            init_seed: 9,
        };
        TransferModel::assemble_with(&spec, &head, &WeightStore::new("/nonexistent"))
            .unwrap()
            .freeze_backbone()
    }

    #[test]
    fn roundtrip_restores_head_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let m = model();
        save_checkpoint(&m, &LabelRegistry::hand_hygiene(), dir.path()).unwrap();
        let (back, labels) = load_checkpoint(dir.path(), &WeightStore::new("/nonexistent")).unwrap();
        assert_eq!(labels, LabelRegistry::hand_hygiene());
        assert_eq!(back.head().layers(), m.head().layers());
        assert_eq!(back.backbone_checksum(), m.backbone_checksum());
        assert!(back.is_backbone_frozen());
        assert_eq!(back.backbone_spec().kind, BackboneKind::Stub);
    }

    #[test]
    fn registry_size_must_match_head() {
        let dir = tempfile::tempdir().unwrap();
        let two = LabelRegistry::new(["a", "b"]).unwrap();
        assert!(matches!(save_checkpoint(&model(), &two, dir.path()), Err(Error::Config(_))));

        save_checkpoint(&model(), &LabelRegistry::hand_hygiene(), dir.path()).unwrap();
        let card_path = dir.path().join(CARD_FILE);
        let mut card: ModelCard = serde_json::from_str(&fs::read_to_string(&card_path).unwrap()).unwrap();
        card.labels = two;
        fs::write(&card_path, serde_json::to_string(&card).unwrap()).unwrap();
        let err = load_checkpoint(dir.path(), &WeightStore::new("/nonexistent")).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn tampered_backbone_checksum_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&model(), &LabelRegistry::hand_hygiene(), dir.path()).unwrap();
        let card_path = dir.path().join(CARD_FILE);
        let mut card: ModelCard = serde_json::from_str(&fs::read_to_string(&card_path).unwrap()).unwrap();
        card.backbone_checksum = "00".repeat(32);
        fs::write(&card_path, serde_json::to_string(&card).unwrap()).unwrap();
        let err = load_checkpoint(dir.path(), &WeightStore::new("/nonexistent")).unwrap_err();
        assert!(err.to_string().contains("checksum"));
    }

    #[test]
    fn missing_checkpoint_is_an_io_error() {
        let err = load_checkpoint(Path::new("/nonexistent/run/model"), &WeightStore::new("/x")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.is_user_error());
    }
}
