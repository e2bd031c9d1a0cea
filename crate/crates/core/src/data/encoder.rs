//! A small built-in frame encoder standing in for a pretrained backbone.
//!
//! Two blocks of stride-1 convolution, relu and 2×2 max pooling map a
//! `[C_img, 4H, 4W]` image to a `[C₀, H, W]` feature map.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::tape::{GradientTape, Var};
use crate::tensor::Tensor;

pub const CONV1_WEIGHT: &str = "encoder.conv1.weight";
pub const CONV1_BIAS: &str = "encoder.conv1.bias";
pub const CONV2_WEIGHT: &str = "encoder.conv2.weight";
pub const CONV2_BIAS: &str = "encoder.conv2.bias";
pub const PREFIX: &str = "encoder.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub image_channels: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub hidden_channels: usize,
    /// `C₀` of the produced feature map.
    pub out_channels: usize,
    #[serde(default = "default_kernel")]
    pub kernel_size: usize,
    /// When false the encoder is frozen ("fixed weight").
    #[serde(default)]
    pub trainable: bool,
}

fn default_kernel() -> usize {
    3
}

impl EncoderConfig {
    pub fn output_shape(&self) -> [usize; 3] {
        [
            self.out_channels,
            self.image_height / 4,
            self.image_width / 4,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_channels == 0 || self.hidden_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("encoder channel counts must be >= 1".into()));
        }
        if self.image_height < 4 || self.image_width < 4 {
            return Err(Error::Config(format!(
                "encoder input {}x{} too small for two 2x poolings",
                self.image_height, self.image_width
            )));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::Config("encoder kernel size must be odd".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct BuiltinEncoder {
    cfg: EncoderConfig,
}

impl BuiltinEncoder {
    pub fn new(cfg: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(BuiltinEncoder { cfg })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let c = &self.cfg;
        let k = c.kernel_size;
        let fan1 = c.image_channels * k * k;
        store.init_uniform(CONV1_WEIGHT, &[c.hidden_channels, c.image_channels, k, k], fan1, rng);
        store.init_const(CONV1_BIAS, &[c.hidden_channels], 0.0);
        let fan2 = c.hidden_channels * k * k;
        store.init_uniform(CONV2_WEIGHT, &[c.out_channels, c.hidden_channels, k, k], fan2, rng);
        store.init_const(CONV2_BIAS, &[c.out_channels], 0.0);
    }

    pub fn encode(&self, tape: &mut GradientTape, params: &Bound, image: Var) -> Result<Var> {
        let c = &self.cfg;
        let shape = tape.value(image).shape();
        if shape != [c.image_channels, c.image_height, c.image_width] {
            return Err(Error::Config(format!(
                "encoder expects [{}, {}, {}] images, got {shape:?}",
                c.image_channels, c.image_height, c.image_width
            )));
        }
        let x = tape.conv2d(image, params.var(CONV1_WEIGHT)?, params.var(CONV1_BIAS)?)?;
        let x = tape.relu(x);
        let x = tape.max_pool2(x)?;
        let x = tape.conv2d(x, params.var(CONV2_WEIGHT)?, params.var(CONV2_BIAS)?)?;
        let x = tape.relu(x);
        tape.max_pool2(x)
    }
}

/// Untaped single-frame encoding.
pub fn encode_frame(encoder: &BuiltinEncoder, params: &ParamStore, image: &Tensor) -> Result<Tensor> {
    let mut tape = GradientTape::new();
    let bound = params.bind(&mut tape, |_| false);
    let x = tape.constant(image.clone());
    let out = encoder.encode(&mut tape, &bound, x)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> EncoderConfig {
        EncoderConfig {
            image_channels: 1,
            image_height: 32,
            image_width: 32,
            hidden_channels: 4,
            out_channels: 8,
            kernel_size: 3,
            trainable: false,
        }
    }

    #[test]
    fn zero_weights_give_zero_features() {
        let enc = BuiltinEncoder::new(cfg()).unwrap();
        let mut p = ParamStore::new();
        enc.init_params(&mut p, &mut ChaCha8Rng::seed_from_u64(0));
        p.zero_all();
        let img = Tensor::full(&[1, 32, 32], 0.7);
        let out = encode_frame(&enc, &p, &img).unwrap();
        assert_eq!(out.shape(), &[8, 8, 8]);
        assert_eq!(out.max_abs(), 0.0);
    }

    #[test]
    fn spatial_mismatch_is_config_error() {
        let enc = BuiltinEncoder::new(cfg()).unwrap();
        let mut p = ParamStore::new();
        enc.init_params(&mut p, &mut ChaCha8Rng::seed_from_u64(0));
        let img = Tensor::zeros(&[1, 28, 28]);
        assert!(matches!(encode_frame(&enc, &p, &img), Err(Error::Config(_))));
    }
}
