//! Backbone input conditioning: resize, channel reorder and mean subtraction.

use std::path::Path;

use image::RgbImage;
use ndarray::{Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-channel ImageNet means in BGR order, on the 0–255 scale.
pub const IMAGENET_BGR_MEANS: [f32; 3] = [103.939, 116.779, 123.68];

/// Side length of the square input the backbones consume.
pub const BACKBONE_INPUT_SIZE: usize = 224;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ChannelOrder {
    Rgb,
    Bgr,
}

/// Target geometry and normalization for frames fed to a backbone.
///
/// `channel_means` are expressed in the output channel order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    pub target_height: usize,
    pub target_width: usize,
    pub channel_means: [f32; 3],
    pub channel_order: ChannelOrder,
}

impl PreprocessSpec {
    /// 224×224, BGR, ImageNet mean subtraction.
    pub fn imagenet() -> Self {
        Self {
            target_height: BACKBONE_INPUT_SIZE,
            target_width: BACKBONE_INPUT_SIZE,
            channel_means: IMAGENET_BGR_MEANS,
            channel_order: ChannelOrder::Bgr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_height == 0 || self.target_width == 0 {
            return Err(Error::config(format!(
                "preprocess target must be positive, got {}x{}",
                self.target_height, self.target_width
            )));
        }
        if self.channel_means.iter().any(|m| !m.is_finite()) {
            return Err(Error::config("channel means must be finite"));
        }
        Ok(())
    }
}

impl Default for PreprocessSpec {
    fn default() -> Self {
        Self::imagenet()
    }
}

/// Resizes an `H×W×3` RGB raster to the spec's target with bilinear
/// interpolation (pixel-center aligned), permutes channels to
/// `spec.channel_order` and subtracts `spec.channel_means`.
pub fn preprocess_frame(image: ArrayView3<'_, u8>, spec: &PreprocessSpec) -> Result<Array3<f32>> {
    spec.validate()?;
    let (h, w, c) = image.dim();
    if h == 0 || w == 0 {
        return Err(Error::Preprocess(format!("empty image ({h}x{w})")));
    }
    if c != 3 {
        return Err(Error::Preprocess(format!("expected 3 channels, got {c}")));
    }
    let (th, tw) = (spec.target_height, spec.target_width);
    let order: [usize; 3] = match spec.channel_order {
        ChannelOrder::Rgb => [0, 1, 2],
        ChannelOrder::Bgr => [2, 1, 0],
    };

    let ys = sample_axis(h, th);
    let xs = sample_axis(w, tw);
    let mut out = Array3::<f32>::zeros((th, tw, 3));
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            for (oc, &ic) in order.iter().enumerate() {
                let p00 = image[[y0, x0, ic]] as f32;
                let p01 = image[[y0, x1, ic]] as f32;
                let p10 = image[[y1, x0, ic]] as f32;
                let p11 = image[[y1, x1, ic]] as f32;
                let top = p00 + (p01 - p00) * fx;
                let bottom = p10 + (p11 - p10) * fx;
                out[[oy, ox, oc]] = top + (bottom - top) * fy - spec.channel_means[oc];
            }
        }
    }
    Ok(out)
}

/// For each output coordinate: the two source neighbours and the blend weight.
fn sample_axis(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, (s - lo as f64) as f32)
        })
        .collect()
}

pub fn rgb_to_array(image: &RgbImage) -> Array3<u8> {
    let (w, h) = image.dimensions();
    Array3::from_shape_vec((h as usize, w as usize, 3), image.as_raw().clone())
        .expect("RgbImage buffer is h*w*3")
}

pub fn array_to_rgb(array: ArrayView3<'_, u8>) -> Result<RgbImage> {
    let (h, w, c) = array.dim();
    if c != 3 {
        return Err(Error::Preprocess(format!("expected 3 channels, got {c}")));
    }
    let data: Vec<u8> = array.iter().copied().collect();
    RgbImage::from_raw(w as u32, h as u32, data)
        .ok_or_else(|| Error::Preprocess("raster size mismatch".into()))
}

/// Loads any still image from disk as an `H×W×3` RGB raster.
pub fn load_rgb(path: impl AsRef<Path>) -> Result<Array3<u8>> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::decode(path, e))?;
    Ok(rgb_to_array(&img.to_rgb8()))
}

#[cfg(test)]
mod tests {
    use ndarray::Array3;
    use proptest::prelude::*;

    use super::*;

    fn spec(h: usize, w: usize, means: [f32; 3], order: ChannelOrder) -> PreprocessSpec {
        PreprocessSpec {
            target_height: h,
            target_width: w,
            channel_means: means,
            channel_order: order,
        }
    }

    fn pattern(h: usize, w: usize) -> Array3<u8> {
        Array3::from_shape_fn((h, w, 3), |(y, x, c)| ((y * 7 + x * 13 + c * 61) % 256) as u8)
    }

    #[test]
    fn identity_when_already_target_sized() {
        let img = pattern(12, 9);
        let out = preprocess_frame(img.view(), &spec(12, 9, [0.0; 3], ChannelOrder::Rgb)).unwrap();
        assert_eq!(out, img.mapv(|v| v as f32));
    }

    #[test]
    fn bgr_permutes_channels() {
        let img = pattern(4, 4);
        let out = preprocess_frame(img.view(), &spec(4, 4, [1.0, 2.0, 3.0], ChannelOrder::Bgr)).unwrap();
        assert_eq!(out[[1, 2, 0]], img[[1, 2, 2]] as f32 - 1.0);
        assert_eq!(out[[1, 2, 2]], img[[1, 2, 0]] as f32 - 3.0);
    }

    #[test]
    fn resizes_to_target_shape() {
        let img = pattern(240, 320);
        let out = preprocess_frame(img.view(), &PreprocessSpec::imagenet()).unwrap();
        assert_eq!(out.dim(), (224, 224, 3));
    }

    #[test]
    fn constant_image_minus_its_value_is_zero() {
        let img = Array3::from_elem((30, 50, 3), 77u8);
        let out = preprocess_frame(img.view(), &spec(224, 224, [77.0; 3], ChannelOrder::Bgr)).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_empty_and_wrong_channel_count() {
        let empty = Array3::<u8>::zeros((0, 5, 3));
        assert!(matches!(
            preprocess_frame(empty.view(), &PreprocessSpec::imagenet()),
            Err(Error::Preprocess(_))
        ));
        let gray = Array3::<u8>::zeros((5, 5, 1));
        assert!(matches!(
            preprocess_frame(gray.view(), &PreprocessSpec::imagenet()),
            Err(Error::Preprocess(_))
        ));
        assert!(matches!(
            preprocess_frame(pattern(2, 2).view(), &spec(0, 4, [0.0; 3], ChannelOrder::Rgb)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn upscaled_values_stay_within_source_range() {
        let img = pattern(8, 8);
        let out = preprocess_frame(img.view(), &spec(31, 17, [0.0; 3], ChannelOrder::Rgb)).unwrap();
        let lo = *img.iter().min().unwrap() as f32;
        let hi = *img.iter().max().unwrap() as f32;
        assert!(out.iter().all(|&v| v >= lo && v <= hi));
    }

    #[test]
    fn raster_conversions_roundtrip() {
        let img = pattern(5, 7);
        let rgb = array_to_rgb(img.view()).unwrap();
        assert_eq!(rgb.dimensions(), (7, 5));
        assert_eq!(rgb_to_array(&rgb), img);
    }

    proptest! {
        #[test]
        fn shape_is_stable_under_reapplication(
            h in 1usize..40, w in 1usize..40, th in 1usize..40, tw in 1usize..40, fill in any::<u8>(),
        ) {
            let s = spec(th, tw, [10.0, 20.0, 30.0], ChannelOrder::Bgr);
            let img = Array3::from_shape_fn((h, w, 3), |(y, x, c)| fill.wrapping_add((y * 3 + x + c) as u8));
            let once = preprocess_frame(img.view(), &s).unwrap();
            prop_assert_eq!(once.dim(), (th, tw, 3));
            let raster = once.mapv(|v| v.round().clamp(0.0, 255.0) as u8);
            let twice = preprocess_frame(raster.view(), &s).unwrap();
            prop_assert_eq!(twice.dim(), once.dim());
        }
    }
}
