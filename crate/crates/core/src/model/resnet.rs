//! ResNet-50 feature extractor (classifier removed, global average pooling).
//!
//! Layer names and structure follow the Keras `ResNet50` application: the
//! stride of a downsampling block sits on its first 1×1 convolution, every
//! convolution may carry a bias, and batch normalization uses ε = 1.001e-5.
//! Weights are read from a tensor file with, per layer `L`:
//!
//! * `L.kernel` of shape `[out, in, kh, kw]` and optionally `L.bias` of shape `[out]`
//! * `B.gamma`, `B.beta`, `B.moving_mean`, `B.moving_variance` for the
//!   batch-norm layer `B` following each convolution
//!
//! where `L` is `conv1_conv` or `conv{stage}_block{b}_{i}_conv` (`i = 0` is the
//! projection shortcut) and `B` is the same name ending in `_bn`.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{s, Array1, Array2, Array3, ArrayView3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::tensor_file::{read_tensor_file, Tensor, TensorData};
use crate::error::{Error, Result};

pub const RESNET50_FEATURE_DIM: usize = 2048;
const BN_EPSILON: f32 = 1.001e-5;

/// (stage name, bottleneck width, blocks, stride of first block)
const STAGES: [(&str, usize, usize, usize); 4] = [
    ("conv2", 64, 3, 1),
    ("conv3", 128, 4, 2),
    ("conv4", 256, 6, 2),
    ("conv5", 512, 3, 2),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerShape {
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
}

/// Every convolution in load order: `(conv name, bn name, shape)`.
fn layer_table() -> Vec<(String, String, LayerShape)> {
    let mut out = vec![(
        "conv1_conv".to_owned(),
        "conv1_bn".to_owned(),
        LayerShape { in_ch: 3, out_ch: 64, kernel: 7, stride: 2, pad: 3 },
    )];
    let mut in_ch = 64;
    for (stage, width, blocks, first_stride) in STAGES {
        for b in 1..=blocks {
            let stride = if b == 1 { first_stride } else { 1 };
            let prefix = format!("{stage}_block{b}");
            let mut push = |i: usize, shape: LayerShape| {
                out.push((format!("{prefix}_{i}_conv"), format!("{prefix}_{i}_bn"), shape));
            };
            if b == 1 {
                push(0, LayerShape { in_ch, out_ch: 4 * width, kernel: 1, stride, pad: 0 });
            }
            push(1, LayerShape { in_ch, out_ch: width, kernel: 1, stride, pad: 0 });
            push(2, LayerShape { in_ch: width, out_ch: width, kernel: 3, stride: 1, pad: 1 });
            push(3, LayerShape { in_ch: width, out_ch: 4 * width, kernel: 1, stride: 1, pad: 0 });
            in_ch = 4 * width;
        }
    }
    out
}

struct ConvBn {
    name: String,
    bn_name: String,
    shape: LayerShape,
    /// `[out, in·k·k]`, row-major identical to the `[out, in, k, k]` kernel.
    weight: Array2<f32>,
    bias: Option<Array1<f32>>,
    gamma: Array1<f32>,
    beta: Array1<f32>,
    mean: Array1<f32>,
    var: Array1<f32>,
    scale: Array1<f32>,
    shift: Array1<f32>,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    fn new(
        name: String,
        bn_name: String,
        shape: LayerShape,
        weight: Array2<f32>,
        bias: Option<Array1<f32>>,
        gamma: Array1<f32>,
        beta: Array1<f32>,
        mean: Array1<f32>,
        var: Array1<f32>,
    ) -> Self {
        let scale = ndarray::Zip::from(&gamma)
            .and(&var)
            .map_collect(|g, v| g / (v + BN_EPSILON).sqrt());
        let mut shift = &beta - &(&mean * &scale);
        if let Some(b) = &bias {
            shift += &(b * &scale);
        }
        Self { name, bn_name, shape, weight, bias, gamma, beta, mean, var, scale, shift }
    }

    fn forward(&self, x: &Array3<f32>, relu: bool) -> Array3<f32> {
        let (_, h, w) = x.dim();
        let LayerShape { kernel: k, stride, pad, out_ch, .. } = self.shape;
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        let mut y = if k == 1 && pad == 0 {
            let sub = x.slice(s![.., ..;stride, ..;stride]);
            let cols = sub.as_standard_layout().into_owned().into_shape_with_order((sub.dim().0, ho * wo)).expect("contiguous");
            self.weight.dot(&cols)
        } else {
            self.weight.dot(&im2col(x.view(), k, stride, pad, ho, wo))
        };
        for (o, mut row) in y.axis_iter_mut(Axis(0)).enumerate() {
            let (sc, sh) = (self.scale[o], self.shift[o]);
            row.mapv_inplace(|v| {
                let v = v * sc + sh;
                if relu { v.max(0.0) } else { v }
            });
        }
        y.into_shape_with_order((out_ch, ho, wo)).expect("conv output size")
    }

    fn hash_into(&self, hasher: &mut Sha256) {
        hash_array(hasher, &format!("{}.kernel", self.name), self.weight.iter());
        if let Some(b) = &self.bias {
            hash_array(hasher, &format!("{}.bias", self.name), b.iter());
        }
        for (suffix, arr) in [
            ("gamma", &self.gamma),
            ("beta", &self.beta),
            ("moving_mean", &self.mean),
            ("moving_variance", &self.var),
        ] {
            hash_array(hasher, &format!("{}.{suffix}", self.bn_name), arr.iter());
        }
    }

    fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, |b| b.len()) + 4 * self.gamma.len()
    }
}

fn hash_array<'a>(hasher: &mut Sha256, name: &str, values: impl Iterator<Item = &'a f32>) {
    hasher.update(name.as_bytes());
    hasher.update([0u8]);
    for v in values {
        hasher.update(v.to_le_bytes());
    }
}

/// Unfolds `[c, h, w]` into `[c·k·k, ho·wo]` patches with zero padding.
pub(crate) fn im2col(
    x: ArrayView3<'_, f32>,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Array2<f32> {
    let (c, h, w) = x.dim();
    let mut cols = Array2::<f32>::zeros((c * k * k, ho * wo));
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let mut row = cols.row_mut((ci * k + ky) * k + kx);
                let row = row.as_slice_mut().expect("standard layout");
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            row[oy * wo + ox] = x[[ci, iy as usize, ix as usize]];
                        }
                    }
                }
            }
        }
    }
    cols
}

struct Bottleneck {
    shortcut: Option<ConvBn>,
    reduce: ConvBn,
    spatial: ConvBn,
    expand: ConvBn,
}

impl Bottleneck {
    fn forward(&self, x: &Array3<f32>) -> Array3<f32> {
        let shortcut = match &self.shortcut {
            Some(conv) => conv.forward(x, false),
            None => x.clone(),
        };
        let h = self.reduce.forward(x, true);
        let h = self.spatial.forward(&h, true);
        let mut h = self.expand.forward(&h, false);
        h.zip_mut_with(&shortcut, |a, b| *a = (*a + b).max(0.0));
        h
    }

    fn convs(&self) -> impl Iterator<Item = &ConvBn> {
        self.shortcut.iter().chain([&self.reduce, &self.spatial, &self.expand])
    }
}

/// Pretrained ResNet-50 trunk producing 2048 pooled features per image.
pub struct ResNet50 {
    stem: ConvBn,
    blocks: Vec<Bottleneck>,
}

impl std::fmt::Debug for ResNet50 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ResNet50")
            .field("blocks", &self.blocks.len())
            .field("params", &self.param_count())
            .finish()
    }
}

impl ResNet50 {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::WeightsUnavailable(format!(
                "no ResNet-50 weights at {}",
                path.display()
            )));
        }
        let tensors = read_tensor_file(path)
            .map_err(|e| Error::WeightsUnavailable(format!("{}: {e}", path.display())))?;
        Self::from_tensors(&tensors)
    }

    pub fn from_tensors(tensors: &BTreeMap<String, Tensor>) -> Result<Self> {
        let fetch = |name: &str, shape: &[usize]| -> Result<Vec<f32>> {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::WeightsUnavailable(format!("missing tensor {name}")))?;
            if t.shape != shape {
                return Err(Error::WeightsUnavailable(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    t.shape
                )));
            }
            match &t.data {
                TensorData::F32(v) => Ok(v.clone()),
                TensorData::F64(v) => Ok(v.iter().map(|&x| x as f32).collect()),
            }
        };
        let convs = layer_table()
            .into_iter()
            .map(|(name, bn, shape)| {
                let LayerShape { in_ch, out_ch, kernel, .. } = shape;
                let weight = Array2::from_shape_vec(
                    (out_ch, in_ch * kernel * kernel),
                    fetch(&format!("{name}.kernel"), &[out_ch, in_ch, kernel, kernel])?,
                )
                .expect("validated shape");
                let bias_name = format!("{name}.bias");
                let bias = if tensors.contains_key(&bias_name) {
                    Some(Array1::from(fetch(&bias_name, &[out_ch])?))
                } else {
                    None
                };
                let vec = |suffix: &str| fetch(&format!("{bn}.{suffix}"), &[out_ch]).map(Array1::from);
                Ok(ConvBn::new(
                    name,
                    bn.clone(),
                    shape,
                    weight,
                    bias,
                    vec("gamma")?,
                    vec("beta")?,
                    vec("moving_mean")?,
                    vec("moving_variance")?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::assemble(convs))
    }

    /// He-initialized weights with identity batch norm; for tests and
    /// benchmarks, not for classification.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let convs = layer_table()
            .into_iter()
            .map(|(name, bn, shape)| {
                let fan_in = shape.in_ch * shape.kernel * shape.kernel;
                let limit = (6.0 / fan_in as f32).sqrt();
                let weight = Array2::from_shape_simple_fn((shape.out_ch, fan_in), || {
                    rng.random_range(-limit..limit)
                });
                let o = shape.out_ch;
                ConvBn::new(
                    name,
                    bn,
                    shape,
                    weight,
                    Some(Array1::zeros(o)),
                    Array1::ones(o),
                    Array1::zeros(o),
                    Array1::zeros(o),
                    Array1::ones(o),
                )
            })
            .collect();
        Self::assemble(convs)
    }

    fn assemble(convs: Vec<ConvBn>) -> Self {
        let mut iter = convs.into_iter();
        let stem = iter.next().expect("stem conv");
        let mut blocks = Vec::new();
        for (_, _, count, _) in STAGES {
            for b in 0..count {
                let shortcut = if b == 0 { iter.next() } else { None };
                blocks.push(Bottleneck {
                    shortcut,
                    reduce: iter.next().expect("layer table"),
                    spatial: iter.next().expect("layer table"),
                    expand: iter.next().expect("layer table"),
                });
            }
        }
        Self { stem, blocks }
    }

    /// Raw parameters in the on-disk layout.
    pub fn to_tensors(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for conv in self.convs() {
            let LayerShape { in_ch, out_ch, kernel, .. } = conv.shape;
            out.insert(
                format!("{}.kernel", conv.name),
                Tensor::f32(vec![out_ch, in_ch, kernel, kernel], conv.weight.iter().copied().collect()),
            );
            if let Some(b) = &conv.bias {
                out.insert(format!("{}.bias", conv.name), Tensor::f32(vec![out_ch], b.to_vec()));
            }
            for (suffix, arr) in [
                ("gamma", &conv.gamma),
                ("beta", &conv.beta),
                ("moving_mean", &conv.mean),
                ("moving_variance", &conv.var),
            ] {
                out.insert(format!("{}.{suffix}", conv.bn_name), Tensor::f32(vec![out_ch], arr.to_vec()));
            }
        }
        out
    }

    fn convs(&self) -> impl Iterator<Item = &ConvBn> {
        std::iter::once(&self.stem).chain(self.blocks.iter().flat_map(Bottleneck::convs))
    }

    pub fn param_count(&self) -> usize {
        self.convs().map(ConvBn::param_count).sum()
    }

    /// SHA-256 over every parameter (name, then little-endian values) in
    /// layer order.
    pub fn checksum(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for conv in self.convs() {
            conv.hash_into(&mut hasher);
        }
        hasher.finalize().into()
    }

    /// Pooled features for one preprocessed `H×W×3` image. Inputs must be at
    /// least 32×32.
    pub fn features(&self, image: ArrayView3<'_, f32>) -> Result<Vec<f32>> {
        let (h, w, c) = image.dim();
        if c != 3 || h < 32 || w < 32 {
            return Err(Error::Shape {
                expected: "H×W×3 with H, W ≥ 32".into(),
                actual: format!("{h}×{w}×{c}"),
            });
        }
        let x = image.permuted_axes([2, 0, 1]).as_standard_layout().into_owned();
        let x = self.stem.forward(&x, true);
        let mut x = max_pool_3x3_s2(&x);
        for block in &self.blocks {
            x = block.forward(&x);
        }
        let (ch, hh, ww) = x.dim();
        let area = (hh * ww) as f32;
        Ok((0..ch)
            .map(|c| x.index_axis(Axis(0), c).sum() / area)
            .collect())
    }
}

/// 3×3 max pooling, stride 2, one pixel of zero padding. Inputs are
/// post-ReLU, so zero padding never wins over a real value.
fn max_pool_3x3_s2(x: &Array3<f32>) -> Array3<f32> {
    let (c, h, w) = x.dim();
    let ho = (h + 2 - 3) / 2 + 1;
    let wo = (w + 2 - 3) / 2 + 1;
    let mut out = Array3::<f32>::zeros((c, ho, wo));
    for ci in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut m = 0.0f32;
                for ky in 0..3 {
                    let iy = (oy * 2 + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let ix = (ox * 2 + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            m = m.max(x[[ci, iy as usize, ix as usize]]);
                        }
                    }
                }
                out[[ci, oy, ox]] = m;
            }
        }
    }
    out
}
