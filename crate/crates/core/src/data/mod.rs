//! Frame sampling, feature files, preprocessing, the built-in encoder and the
//! synthetic motion dataset.

pub mod encoder;
pub mod manifest;
pub mod pcfv;
pub mod preprocess;
pub mod sampling;
pub mod shapes;

pub use encoder::{encode_frame, BuiltinEncoder, EncoderConfig};
pub use manifest::{DatasetManifest, ManifestEntry};
pub use pcfv::{read_feature_clip, write_feature_clip, FeatureClip};
pub use preprocess::{center_crop, preprocess_frame, Normalization};
pub use sampling::{eval_indices, sample_window, subsample_eval, subsample_train, train_indices};
pub use shapes::{generate_moving_shapes, render_clip, write_dataset, MotionClass, MovingShapesConfig};

/// Window and subsample lengths applied to every clip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    /// Consecutive frames taken from the source clip.
    pub window: usize,
    /// Frames kept from the window; equals the network's time steps.
    pub steps: usize,
}

impl SamplingConfig {
    pub fn paper() -> Self {
        SamplingConfig {
            window: 90,
            steps: 30,
        }
    }

    pub fn desk() -> Self {
        SamplingConfig {
            window: 30,
            steps: 10,
        }
    }
}
