//! A predictive coding network (PredNet) for video action recognition,
//! built on a small reverse-mode autodiff tape.
//!
//! Frames are turned into feature maps (by an external backbone or the
//! built-in encoder), unrolled through a stack of convolutional LSTM
//! layers that predict their input and pass the error upward, and
//! classified from pooled features at every step.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod head;
pub mod model;
pub mod params;
pub mod prednet;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{FrameInput, Model, ModelConfig, Prediction};
pub use params::ParamStore;
pub use tape::{GradientTape, Var};
pub use tensor::Tensor;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/tape.md")]
    mod tape {}
    #[doc = include_str!("../../../book/src/prednet.md")]
    mod prednet {}
    #[doc = include_str!("../../../book/src/fusion.md")]
    mod fusion {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
