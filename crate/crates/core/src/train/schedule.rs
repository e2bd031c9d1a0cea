use std::collections::BTreeMap;

use crate::tensor::Tensor;

/// Mutable optimizer state: momentum buffers and the plateau schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    /// One buffer per trainable parameter, keyed by parameter name.
    pub velocities: BTreeMap<String, Tensor>,
    pub initial_lr: f64,
    /// Number of 10× reductions applied so far.
    pub reductions: u32,
    /// `initial_lr / 10^reductions`, computed in one division so repeated
    /// drops land on the exact decimal value.
    pub lr: f64,
    pub epochs_since_best: usize,
    /// `None` until the first validation loss is seen.
    pub best_val_loss: Option<f64>,
}

impl OptimizerState {
    pub fn new(lr: f64) -> Self {
        OptimizerState {
            velocities: BTreeMap::new(),
            initial_lr: lr,
            reductions: 0,
            lr,
            epochs_since_best: 0,
            best_val_loss: None,
        }
    }
}

/// When to divide the learning rate by 10.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlateauRule {
    pub patience: usize,
    /// Relative improvement required to count as a new best.
    pub threshold: f64,
}

impl Default for PlateauRule {
    fn default() -> Self {
        PlateauRule {
            patience: 3,
            threshold: 1e-3,
        }
    }
}

/// What one call to [`plateau_schedule`] did.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlateauEvent {
    Improved,
    Stalled,
    Reduced,
}

/// Feeds one epoch's validation loss to the schedule.
pub fn plateau_schedule(state: &mut OptimizerState, val_loss: f64, rule: PlateauRule) -> PlateauEvent {
    let improved = match state.best_val_loss {
        None => true,
        Some(best) => val_loss < best * (1.0 - rule.threshold),
    };
    if improved {
        state.best_val_loss = Some(val_loss);
        state.epochs_since_best = 0;
        return PlateauEvent::Improved;
    }
    state.epochs_since_best += 1;
    if state.epochs_since_best > rule.patience {
        state.reductions += 1;
        state.lr = state.initial_lr / 10f64.powi(state.reductions as i32);
        state.epochs_since_best = 0;
        return PlateauEvent::Reduced;
    }
    PlateauEvent::Stalled
}
