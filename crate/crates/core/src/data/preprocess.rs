//! Center crop and per-channel normalization of `[C, H, W]` pixel frames.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    /// Square crop side.
    pub crop: usize,
    /// Per-channel mean and standard deviation on the `[0, 1]` scale. A
    /// single value applies to every channel.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    /// 224 crop with the model-zoo ImageNet statistics.
    pub fn paper() -> Self {
        Normalization {
            crop: 224,
            mean: vec![0.485, 0.456, 0.406],
            std: vec![0.229, 0.224, 0.225],
        }
    }

    /// Keeps the black background at zero and scales white to 4.
    pub fn desk(canvas: usize) -> Self {
        Normalization {
            crop: canvas,
            mean: vec![0.0],
            std: vec![0.25],
        }
    }

    fn channel_stat(values: &[f64], c: usize, what: &str) -> Result<f64> {
        match values.len() {
            1 => Ok(values[0]),
            n if c < n => Ok(values[c]),
            n => Err(Error::Config(format!(
                "{n} {what} values for a {}-channel image",
                c + 1
            ))),
        }
    }
}

/// Central `size × size` window; odd margins leave the extra row/column at
/// the bottom/right.
pub fn center_crop(image: &Tensor, size: usize) -> Result<Tensor> {
    let (c, h, w) = match *image.shape() {
        [c, h, w] => (c, h, w),
        _ => {
            return Err(Error::Input(format!(
                "image must be [C,H,W], got {:?}",
                image.shape()
            )))
        }
    };
    if h < size || w < size || size == 0 {
        return Err(Error::Input(format!(
            "image {h}x{w} is smaller than the {size}x{size} crop"
        )));
    }
    let (top, left) = ((h - size) / 2, (w - size) / 2);
    let mut data = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for y in top..top + size {
            let row = ch * h * w + y * w + left;
            data.extend_from_slice(&image.data()[row..row + size]);
        }
    }
    Tensor::new(vec![c, size, size], data)
}

/// `(pixel / 255 − mean_c) / std_c` after a center crop.
pub fn preprocess_frame(image: &Tensor, norm: &Normalization) -> Result<Tensor> {
    let mut out = center_crop(image, norm.crop)?;
    let c = out.shape()[0];
    let plane = norm.crop * norm.crop;
    for ch in 0..c {
        let mean = Normalization::channel_stat(&norm.mean, ch, "mean")?;
        let std = Normalization::channel_stat(&norm.std, ch, "std")?;
        if std <= 0.0 {
            return Err(Error::Config(format!("std {std} must be positive")));
        }
        for v in &mut out.data_mut()[ch * plane..(ch + 1) * plane] {
            *v = (*v / 255.0 - mean) / std;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mid_gray_maps_to_zero() {
        let img = Tensor::full(&[1, 4, 4], 127.5);
        let norm = Normalization {
            crop: 4,
            mean: vec![0.5],
            std: vec![0.5],
        };
        let out = preprocess_frame(&img, &norm).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn desk_keeps_black_at_zero() {
        let img = Tensor::new(vec![1, 2, 2], vec![0.0, 255.0, 0.0, 0.0]).unwrap();
        let out = preprocess_frame(&img, &Normalization::desk(2)).unwrap();
        assert_eq!(out.data(), &[0.0, 4.0, 0.0, 0.0]);
    }

    #[test]
    fn crop_drops_one_pixel_border() {
        let n = 226;
        let img = Tensor::new(vec![1, n, n], (0..n * n).map(|v| v as f64).collect()).unwrap();
        let out = center_crop(&img, 224).unwrap();
        assert_eq!(out.shape(), &[1, 224, 224]);
        assert_eq!(out.data()[0], (n + 1) as f64);
        assert_eq!(*out.data().last().unwrap(), (224 * n + 224) as f64);
    }

    #[test]
    fn crop_is_idempotent() {
        let img = Tensor::new(vec![3, 9, 7], (0..189).map(|v| v as f64).collect()).unwrap();
        let once = center_crop(&img, 5).unwrap();
        assert_eq!(center_crop(&once, 5).unwrap(), once);
    }

    #[test]
    fn too_small_rejected() {
        let img = Tensor::zeros(&[1, 10, 10]);
        assert!(matches!(center_crop(&img, 11), Err(Error::Input(_))));
    }

    #[test]
    fn per_channel_stats() {
        let img = Tensor::full(&[3, 2, 2], 255.0);
        let out = preprocess_frame(
            &img,
            &Normalization {
                crop: 2,
                mean: vec![0.0, 0.5, 1.0],
                std: vec![1.0, 0.5, 0.25],
            },
        )
        .unwrap();
        assert_eq!(out.data()[0], 1.0);
        assert_eq!(out.data()[4], 1.0);
        assert_eq!(out.data()[8], 0.0);
        let bad = Normalization {
            crop: 2,
            mean: vec![0.0, 0.5],
            std: vec![1.0],
        };
        assert!(preprocess_frame(&img, &bad).is_err());
    }
}
