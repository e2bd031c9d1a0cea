use crate::data::{encode_frame, preprocess_frame, FeatureClip, Normalization};
use crate::error::{Error, Result};
use crate::model::{FrameInput, Model};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// What the frames of a [`ClipSet`] hold.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputKind {
    /// `A_0` feature maps, fed straight to PredNet.
    Features,
    /// Preprocessed images, encoded on every forward pass.
    Images,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedClip {
    /// Every source frame, in order.
    pub frames: Vec<Tensor>,
    pub label: usize,
    pub source_id: String,
}

impl PreparedClip {
    pub fn gather(&self, indices: &[usize]) -> Vec<Tensor> {
        indices.iter().map(|&i| self.frames[i].clone()).collect()
    }
}

/// Clips ready for the model.
///
/// Pixel clips are preprocessed once. When the model's encoder is frozen
/// they are also encoded once, so training sees cached features.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipSet {
    pub kind: InputKind,
    pub clips: Vec<PreparedClip>,
}

impl ClipSet {
    pub fn prepare(model: &Model, params: &ParamStore, clips: &[FeatureClip], norm: &Normalization) -> Result<Self> {
        let Some(first) = clips.first() else {
            return Ok(ClipSet {
                kind: InputKind::Features,
                clips: Vec::new(),
            });
        };
        if clips.iter().any(|c| c.pixels != first.pixels) {
            return Err(Error::Input("dataset mixes pixel and feature clips".into()));
        }
        let p = &model.config().prednet;
        let kind = match (first.pixels, model.encoder()) {
            (false, _) => InputKind::Features,
            (true, None) => {
                return Err(Error::Config(
                    "pixel clips need an encoder in the model config".into(),
                ))
            }
            (true, Some(enc)) if enc.config().trainable => InputKind::Images,
            (true, Some(_)) => InputKind::Features,
        };
        let mut out = Vec::with_capacity(clips.len());
        for clip in clips {
            if clip.label >= model.config().num_classes {
                return Err(Error::Input(format!(
                    "{}: label {} out of range for {} classes",
                    clip.source_id,
                    clip.label,
                    model.config().num_classes
                )));
            }
            let mut frames = Vec::with_capacity(clip.num_frames());
            for i in 0..clip.num_frames() {
                let f = clip.frame(i);
                let f = if clip.pixels {
                    let img = preprocess_frame(&f, norm)?;
                    match kind {
                        InputKind::Images => img,
                        InputKind::Features => encode_frame(model.encoder().expect("checked above"), params, &img)?,
                    }
                } else {
                    f
                };
                frames.push(f);
            }
            if kind == InputKind::Features {
                let expected = [p.input_channels, p.height, p.width];
                if frames[0].shape() != expected {
                    return Err(Error::Input(format!(
                        "{}: frame features are {:?}, model expects {expected:?}",
                        clip.source_id,
                        frames[0].shape()
                    )));
                }
            }
            out.push(PreparedClip {
                frames,
                label: clip.label,
                source_id: clip.source_id.clone(),
            });
        }
        Ok(ClipSet { kind, clips: out })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.clips.iter().map(|c| c.label).collect()
    }

    pub fn input<'a>(&self, frames: &'a [Tensor]) -> FrameInput<'a> {
        match self.kind {
            InputKind::Features => FrameInput::Features(frames),
            InputKind::Images => FrameInput::Images(frames),
        }
    }
}
