use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ClipForward;
use crate::prednet::{prediction_error_loss, ErrorWeights};
use crate::tape::{GradientTape, Var};

/// Training objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LossMode {
    /// Cross-entropy of the time-averaged scores.
    Classification,
    /// Weighted mean prediction error (unsupervised).
    PredictionError,
    /// `classification + alpha · prediction_error`.
    Combined { alpha: f64 },
}

impl Default for LossMode {
    fn default() -> Self {
        LossMode::Classification
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossMode::Classification => write!(f, "classification"),
            LossMode::PredictionError => write!(f, "prediction_error"),
            LossMode::Combined { alpha } => write!(f, "combined:{alpha}"),
        }
    }
}

impl From<LossMode> for String {
    fn from(m: LossMode) -> String {
        m.to_string()
    }
}

impl TryFrom<String> for LossMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for LossMode {
    type Err = Error;

    /// `classification`, `prediction_error`, `combined` (α = 0.1) or
    /// `combined:<alpha>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification" => Ok(LossMode::Classification),
            "prediction_error" => Ok(LossMode::PredictionError),
            "combined" => Ok(LossMode::Combined { alpha: 0.1 }),
            _ => match s.strip_prefix("combined:").map(str::parse::<f64>) {
                Some(Ok(alpha)) if alpha >= 0.0 => Ok(LossMode::Combined { alpha }),
                _ => Err(Error::Config(format!("unknown loss mode {s:?}"))),
            },
        }
    }
}

/// Scalar loss for one clip's forward pass.
///
/// With `per_step` set, classification is the mean of per-step
/// cross-entropies instead of the cross-entropy of the averaged scores.
pub fn compute_loss(
    tape: &mut GradientTape,
    fwd: &ClipForward,
    label: usize,
    mode: LossMode,
    per_step: bool,
) -> Result<Var> {
    let cls = |tape: &mut GradientTape| -> Result<Var> {
        if per_step {
            let terms = fwd
                .step_scores
                .iter()
                .map(|&s| tape.softmax_cross_entropy(s, label))
                .collect::<Result<Vec<_>>>()?;
            tape.average(&terms)
        } else {
            tape.softmax_cross_entropy(fwd.scores, label)
        }
    };
    let pred = |tape: &mut GradientTape| -> Result<Var> {
        let Some(first) = fwd.steps.first() else {
            return Err(Error::Usage("no steps to score".into()));
        };
        if first.e.is_empty() {
            return Err(Error::Config(
                "prediction-error loss needs PredNet enabled".into(),
            ));
        }
        let w = ErrorWeights::default_for(first.e.len(), fwd.steps.len());
        prediction_error_loss(tape, &fwd.steps, &w)
    };
    match mode {
        LossMode::Classification => cls(tape),
        LossMode::PredictionError => pred(tape),
        LossMode::Combined { alpha } => {
            let c = cls(tape)?;
            let p = pred(tape)?;
            let p = tape.scale(p, alpha);
            tape.add(c, p)
        }
    }
}
