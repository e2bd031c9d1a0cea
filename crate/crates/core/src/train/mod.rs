//! SGD with momentum, the plateau schedule, loss assembly, the training loop
//! and checkpoints.

pub mod checkpoint;
mod clips;
mod fit;
pub mod loss;
pub mod schedule;
pub mod sgd;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{Checkpoint, RngState};
pub use clips::{ClipSet, InputKind, PreparedClip};
pub use fit::{
    epoch_rng, evaluate_pass, fit, initial_checkpoint, init_rng, train_epoch, EpochStats, EvalPass,
    FitOutcome, LogRow, BEST_CHECKPOINT, LAST_CHECKPOINT, LOG_FILE, LOG_HEADER,
};
pub use loss::{compute_loss, LossMode};
pub use schedule::{plateau_schedule, OptimizerState, PlateauEvent, PlateauRule};
pub use sgd::{sgd_update, sgd_update_in_place, SgdParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stalled epochs tolerated before the learning rate drops.
    pub patience: usize,
    /// Relative validation-loss improvement that resets the patience counter.
    pub threshold: f64,
    pub loss: LossMode,
    /// Average per-step cross-entropies instead of scoring the averaged logits.
    #[serde(default)]
    pub per_step_loss: bool,
    pub seed: u64,
}

impl TrainConfig {
    pub fn paper() -> Self {
        TrainConfig {
            lr: 0.0064,
            momentum: 0.9,
            weight_decay: 0.001,
            batch_size: 256,
            epochs: 40,
            patience: 3,
            threshold: 1e-3,
            loss: LossMode::Classification,
            per_step_loss: false,
            seed: 7,
        }
    }

    pub fn desk() -> Self {
        TrainConfig {
            lr: 0.05,
            batch_size: 16,
            epochs: 15,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold must be in [0, 1), got {}", self.threshold)));
        }
        Ok(())
    }

    pub fn sgd(&self, lr: f64) -> SgdParams {
        SgdParams {
            lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    pub fn plateau(&self) -> PlateauRule {
        PlateauRule {
            patience: self.patience,
            threshold: self.threshold,
        }
    }
}
