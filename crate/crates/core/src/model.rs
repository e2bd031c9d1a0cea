//! The full classifier: optional frame encoder, PredNet, fusion head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::encoder::{self, BuiltinEncoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::head::{self, aggregate_scores, classify_step, fuse_step_vars, init_head};
use crate::params::{Bound, ParamStore};
use crate::prednet::{PredNet, PredNetConfig, StepVars};
use crate::tape::{GradientTape, Var};
use crate::tensor::{argmax, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub prednet: PredNetConfig,
    pub num_classes: usize,
    /// With PredNet disabled the head sees only the pooled frame feature
    /// (the frame-only baseline).
    #[serde(default = "yes")]
    pub use_prednet: bool,
    /// Built-in encoder for pixel clips; feature clips bypass it.
    #[serde(default)]
    pub encoder: Option<EncoderConfig>,
}

fn yes() -> bool {
    true
}

/// The model's per-frame inputs: encoder features, or preprocessed images
/// still to be encoded.
#[derive(Clone, Copy, Debug)]
pub enum FrameInput<'a> {
    Features(&'a [Tensor]),
    Images(&'a [Tensor]),
}

/// Tape handles produced by one clip's forward pass.
#[derive(Clone, Debug)]
pub struct ClipForward {
    pub steps: Vec<StepVars>,
    pub step_scores: Vec<Var>,
    /// Time-averaged scores.
    pub scores: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub scores: Tensor,
    pub step_scores: Vec<Tensor>,
}

#[derive(Clone, Debug)]
pub struct Model {
    cfg: ModelConfig,
    prednet: PredNet,
    encoder: Option<BuiltinEncoder>,
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        let prednet = PredNet::new(cfg.prednet.clone())?;
        if cfg.num_classes == 0 {
            return Err(Error::Config("need at least one class".into()));
        }
        let encoder = match &cfg.encoder {
            None => None,
            Some(ec) => {
                let [c, h, w] = ec.output_shape();
                let p = &cfg.prednet;
                if [c, h, w] != [p.input_channels, p.height, p.width] {
                    return Err(Error::Config(format!(
                        "encoder produces [{c}, {h}, {w}] but PredNet expects [{}, {}, {}]",
                        p.input_channels, p.height, p.width
                    )));
                }
                Some(BuiltinEncoder::new(ec.clone())?)
            }
        };
        Ok(Model {
            cfg,
            prednet,
            encoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn prednet(&self) -> &PredNet {
        &self.prednet
    }

    pub fn encoder(&self) -> Option<&BuiltinEncoder> {
        self.encoder.as_ref()
    }

    pub fn time_steps(&self) -> usize {
        self.cfg.prednet.time_steps
    }

    pub fn fused_len(&self) -> usize {
        let p = &self.cfg.prednet;
        if self.cfg.use_prednet {
            head::fused_len(p.input_channels, &p.repr_channels)
        } else {
            p.input_channels
        }
    }

    /// Fresh parameters: encoder, then PredNet, then head, all from `rng`.
    pub fn init_params(&self, rng: &mut impl Rng) -> ParamStore {
        let mut store = ParamStore::new();
        if let Some(enc) = &self.encoder {
            enc.init_params(&mut store, rng);
        }
        if self.cfg.use_prednet {
            self.prednet.init_params(&mut store, rng);
        }
        init_head(&mut store, self.fused_len(), self.cfg.num_classes, rng);
        store
    }

    /// Whether the optimizer may update `name`.
    pub fn is_trainable(&self, name: &str) -> bool {
        if name.starts_with(encoder::PREFIX) {
            self.cfg.encoder.as_ref().is_some_and(|e| e.trainable)
        } else {
            true
        }
    }

    pub fn bind(&self, tape: &mut GradientTape, params: &ParamStore) -> Bound {
        params.bind(tape, |n| self.is_trainable(n))
    }

    /// Records the frame features `A_0`, encoding images when needed.
    pub fn frame_vars(&self, tape: &mut GradientTape, params: &Bound, input: FrameInput<'_>) -> Result<Vec<Var>> {
        match input {
            FrameInput::Features(fs) => Ok(fs.iter().map(|f| tape.constant(f.clone())).collect()),
            FrameInput::Images(imgs) => {
                let enc = self
                    .encoder
                    .as_ref()
                    .ok_or_else(|| Error::Config("pixel clips need an encoder in the model config".into()))?;
                imgs.iter()
                    .map(|img| {
                        let x = tape.constant(img.clone());
                        enc.encode(tape, params, x)
                    })
                    .collect()
            }
        }
    }

    /// Unroll, fuse and classify every step, then average the scores.
    pub fn forward(&self, tape: &mut GradientTape, params: &Bound, frames: &[Var]) -> Result<ClipForward> {
        let steps = if self.cfg.use_prednet {
            self.prednet.unroll(tape, params, frames)?
        } else {
            if frames.len() != self.time_steps() {
                return Err(Error::Input(format!(
                    "clip has {} frames, model expects {}",
                    frames.len(),
                    self.time_steps()
                )));
            }
            frames
                .iter()
                .enumerate()
                .map(|(i, &a0)| StepVars {
                    t: i + 1,
                    a: vec![a0],
                    ahat: vec![],
                    e: vec![],
                    r: vec![],
                })
                .collect()
        };
        let mut step_scores = Vec::with_capacity(steps.len());
        for s in &steps {
            let fused = fuse_step_vars(tape, s)?;
            step_scores.push(classify_step(tape, params, fused)?);
        }
        let scores = tape.average(&step_scores)?;
        Ok(ClipForward {
            steps,
            step_scores,
            scores,
        })
    }

    /// Prediction for one clip: argmax of the averaged scores, ties to the
    /// lowest class index.
    pub fn predict_clip(&self, params: &ParamStore, input: FrameInput<'_>) -> Result<Prediction> {
        let mut tape = GradientTape::new();
        let bound = params.bind(&mut tape, |_| false);
        let frames = self.frame_vars(&mut tape, &bound, input)?;
        let fwd = self.forward(&mut tape, &bound, &frames)?;
        let step_scores: Vec<Tensor> = fwd.step_scores.iter().map(|&v| tape.value(v).clone()).collect();
        let scores = aggregate_scores(&step_scores)?;
        Ok(Prediction {
            label: argmax(scores.data()),
            scores,
            step_scores,
        })
    }
}
