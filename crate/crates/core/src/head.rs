//! Per-step feature fusion, classification and score averaging over time.
//!
//! At each step the frame feature `A_0` and every representation `R_l` are
//! globally max-pooled and concatenated in that order into one vector; a
//! linear layer turns it into class scores. The clip's score vector is the
//! plain average of the per-step (raw logit) vectors.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::prednet::{StepOutput, StepVars};
use crate::tape::{GradientTape, Var};
use crate::tensor::{self, Tensor};

pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

/// Length of the fused vector: `C₀ + Σ_l repr_channels_l`.
pub fn fused_len(input_channels: usize, repr_channels: &[usize]) -> usize {
    input_channels + repr_channels.iter().sum::<usize>()
}

pub fn init_head(store: &mut ParamStore, fused: usize, classes: usize, rng: &mut impl Rng) {
    store.init_uniform(HEAD_WEIGHT, &[classes, fused], fused, rng);
    store.init_const(HEAD_BIAS, &[classes], 0.0);
}

/// Pooled `A_0`, then pooled `R_0, R_1, …`.
pub fn fuse_step_features(step: &StepOutput) -> Result<Tensor> {
    let mut parts = vec![tensor::global_max_pool(step.a0())?];
    for r in &step.r {
        parts.push(tensor::global_max_pool(r)?);
    }
    let refs: Vec<&Tensor> = parts.iter().collect();
    tensor::channel_concat(&refs)
}

pub fn fuse_step_vars(tape: &mut GradientTape, step: &StepVars) -> Result<Var> {
    let mut parts = vec![tape.global_max_pool(step.a[0])?];
    for &r in &step.r {
        parts.push(tape.global_max_pool(r)?);
    }
    tape.concat(&parts)
}

/// Raw scores of the classification layer; no softmax.
pub fn classify_step(tape: &mut GradientTape, params: &Bound, fused: Var) -> Result<Var> {
    let w = params.var(HEAD_WEIGHT)?;
    let expected = tape.value(w).shape()[1];
    let got = tape.value(fused).len();
    if expected != got {
        return Err(Error::Config(format!(
            "fused feature has length {got}, head expects {expected}"
        )));
    }
    tape.linear(fused, w, params.var(HEAD_BIAS)?)
}

/// Elementwise mean of per-step score vectors.
pub fn aggregate_scores(scores: &[Tensor]) -> Result<Tensor> {
    let first = scores
        .first()
        .ok_or_else(|| Error::Usage("no score vectors to aggregate".into()))?;
    let n = first.len();
    if scores.iter().any(|s| s.len() != n) {
        return Err(Error::Config("score vectors differ in length".into()));
    }
    // Summing a sorted copy keeps the result independent of list order.
    let out = (0..n)
        .map(|i| {
            let mut column: Vec<f64> = scores.iter().map(|s| s.data()[i]).collect();
            column.sort_by(f64::total_cmp);
            column.iter().sum::<f64>() / scores.len() as f64
        })
        .collect();
    Ok(Tensor::vector(out))
}
