//! Central finite differences, used as the oracle for every backward rule.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{FrameInput, Model, ModelConfig};
use crate::params::ParamStore;
use crate::prednet::{ErrorMode, PredNetConfig};
use crate::tape::GradientTape;
use crate::tensor::Tensor;
use crate::train::{compute_loss, LossMode};

/// Per-element central difference `(f(x + h·e) − f(x − h·e)) / 2h`.
pub fn finite_difference_gradient(
    mut f: impl FnMut(&Tensor) -> f64,
    x: &Tensor,
    h: f64,
) -> Tensor {
    assert!(h > 0.0, "step must be positive");
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    out
}

/// Relative discrepancy `|a − n| / max(|a|, |n|, floor)`.
///
/// The floor keeps entries whose true gradient is (near) zero from turning
/// finite-difference round-off into huge ratios.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    if denom == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / denom
    }
}

/// Largest elementwise [`relative_error`] between two equally-shaped tensors.
pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor, floor: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| relative_error(a, n, floor))
        .fold(0.0, f64::max)
}

/// Settings for a whole-model gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckConfig {
    pub model: ModelConfig,
    pub loss: LossMode,
    pub seed: u64,
    /// Finite-difference step.
    pub step: f64,
    /// Denominator floor of [`relative_error`].
    pub floor: f64,
}

impl ModelCheckConfig {
    /// Two layers, 4×4 maps, 3 input channels, 5 steps, 2 classes, with the
    /// combined loss so both the classifier and the error units are checked.
    pub fn desk() -> Self {
        ModelCheckConfig {
            model: ModelConfig {
                prednet: PredNetConfig {
                    input_channels: 3,
                    repr_channels: vec![3, 3],
                    height: 4,
                    width: 4,
                    time_steps: 5,
                    kernel_size: 3,
                    error_mode: ErrorMode::RectifiedSplit,
                },
                num_classes: 2,
                use_prednet: true,
                encoder: None,
            },
            loss: LossMode::Combined { alpha: 0.1 },
            seed: 1,
            step: 1e-5,
            floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckReport {
    /// Largest relative error per parameter tensor, in name order.
    pub per_param: Vec<(String, f64)>,
    pub max_rel_error: f64,
    pub scalars: usize,
    pub elapsed: Duration,
}

/// Compares backpropagated gradients of every model parameter with central
/// finite differences on one random clip.
pub fn check_model(cfg: &ModelCheckConfig) -> Result<ModelCheckReport> {
    let started = Instant::now();
    let model = Model::new(cfg.model.clone())?;
    if model.encoder().is_some() {
        return Err(Error::Config("gradient check runs on feature inputs; drop the encoder".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // Zero-initialized biases put ReLUs exactly on their kink at t = 1,
    // where the one-sided derivative and the central difference disagree.
    let mut params = model.init_params(&mut rng);
    for (_, t) in params.iter_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
    }
    let p = &cfg.model.prednet;
    let frames: Vec<Tensor> = (0..p.time_steps)
        .map(|_| {
            let n = p.input_channels * p.height * p.width;
            Tensor::new(
                vec![p.input_channels, p.height, p.width],
                (0..n).map(|_| rng.gen_range(0.0..1.0)).collect(),
            )
            .expect("valid shape")
        })
        .collect();
    let label = rng.gen_range(0..cfg.model.num_classes);

    let loss_of = |store: &ParamStore, grads: bool| -> Result<(f64, Option<Vec<(String, Tensor)>>)> {
        let mut tape = GradientTape::new();
        let bound = store.bind(&mut tape, |_| grads);
        let a0 = model.frame_vars(&mut tape, &bound, FrameInput::Features(&frames))?;
        let fwd = model.forward(&mut tape, &bound, &a0)?;
        let loss = compute_loss(&mut tape, &fwd, label, cfg.loss, false)?;
        let value = tape.value(loss).item();
        if !grads {
            return Ok((value, None));
        }
        let mut g = tape.backward(loss)?;
        let out = bound
            .iter()
            .map(|(name, var)| {
                let t = g.take(var).unwrap_or_else(|| Tensor::zeros(store.get(name).expect("bound").shape()));
                (name.to_string(), t)
            })
            .collect();
        Ok((value, Some(out)))
    };

    let (_, analytic) = loss_of(&params, true)?;
    let mut per_param = Vec::new();
    let mut probe = params.clone();
    for (name, grad) in analytic.expect("requested") {
        let original = params.get(&name)?.clone();
        let mut failure = None;
        let numeric = finite_difference_gradient(
            |t| {
                *probe.get_mut(&name).expect("present") = t.clone();
                match loss_of(&probe, false) {
                    Ok((v, _)) => v,
                    Err(e) => {
                        failure.get_or_insert(e);
                        f64::NAN
                    }
                }
            },
            &original,
            cfg.step,
        );
        *probe.get_mut(&name)? = original;
        if let Some(e) = failure {
            return Err(e);
        }
        per_param.push((name, max_relative_error(&grad, &numeric, cfg.floor)));
    }
    let max_rel_error = per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(ModelCheckReport {
        per_param,
        max_rel_error,
        scalars: params.num_scalars(),
        elapsed: started.elapsed(),
    })
}
