use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{Checkpoint, RngState};
use super::clips::ClipSet;
use super::loss::compute_loss;
use super::schedule::{plateau_schedule, OptimizerState, PlateauEvent};
use super::sgd::sgd_update_in_place;
use super::TrainConfig;
use crate::data::{eval_indices, train_indices, SamplingConfig};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::ParamStore;
use crate::tape::GradientTape;
use crate::tensor::{argmax, Tensor};

pub const LAST_CHECKPOINT: &str = "last.pcck";
pub const BEST_CHECKPOINT: &str = "best.pcck";
pub const LOG_FILE: &str = "train_log.csv";
pub const LOG_HEADER: &str = "epoch,lr,train_loss,val_loss,val_acc";

/// Random stream for parameter initialization.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random stream for shuffling and frame sampling in `epoch` (0-based).
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Parameters are stored as `f32` in checkpoints, so the trainer keeps
/// them on the `f32` grid and a resumed run continues bit-identically.
fn round_to_f32(t: &mut Tensor) {
    for v in t.data_mut() {
        *v = *v as f32 as f64;
    }
}

/// Fresh parameters and zero momentum for epoch 0.
pub fn initial_checkpoint(model: &Model, cfg: &TrainConfig, config: serde_json::Value) -> Checkpoint {
    let mut params = model.init_params(&mut init_rng(cfg.seed));
    let mut optimizer = OptimizerState::new(cfg.lr);
    for (name, t) in params.iter_mut() {
        round_to_f32(t);
        if model.is_trainable(name) {
            optimizer.velocities.insert(name.to_string(), Tensor::zeros(t.shape()));
        }
    }
    Checkpoint {
        params,
        optimizer,
        epoch: 0,
        rng: RngState {
            seed: cfg.seed,
            next_epoch: 0,
        },
        config,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    /// Mean per-clip loss.
    pub loss: f64,
    pub accuracy: f64,
}

/// One pass over the training clips in shuffled mini-batches.
///
/// Per-clip gradients are averaged within a batch and every trainable
/// parameter gets one SGD step per batch. Frozen parameters are untouched.
pub fn train_epoch(
    model: &Model,
    params: &mut ParamStore,
    opt: &mut OptimizerState,
    data: &ClipSet,
    cfg: &TrainConfig,
    sampling: SamplingConfig,
    epoch: usize,
) -> Result<EpochStats> {
    if data.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    let mut rng = epoch_rng(cfg.seed, epoch);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let hp = cfg.sgd(opt.lr);
    let mut total_loss = 0.0;
    let mut correct = 0usize;
    for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
        let mut sums: BTreeMap<String, Tensor> = BTreeMap::new();
        for &ci in batch {
            let clip = &data.clips[ci];
            let idx = train_indices(clip.frames.len(), sampling.window, sampling.steps, &mut rng)?;
            let frames = clip.gather(&idx);
            let mut tape = GradientTape::new();
            let bound = model.bind(&mut tape, params);
            let a0 = model.frame_vars(&mut tape, &bound, data.input(&frames))?;
            let fwd = model.forward(&mut tape, &bound, &a0)?;
            let loss = compute_loss(&mut tape, &fwd, clip.label, cfg.loss, cfg.per_step_loss)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "epoch {epoch}, batch {b}: loss is {value} on clip {}",
                    clip.source_id
                )));
            }
            total_loss += value;
            correct += (argmax(tape.value(fwd.scores).data()) == clip.label) as usize;
            let mut grads = tape.backward(loss)?;
            for (name, var) in bound.iter() {
                if !model.is_trainable(name) {
                    continue;
                }
                if let Some(g) = grads.take(var) {
                    match sums.get_mut(name) {
                        Some(s) => {
                            for (a, &x) in s.data_mut().iter_mut().zip(g.data()) {
                                *a += x;
                            }
                        }
                        None => {
                            sums.insert(name.to_string(), g);
                        }
                    }
                }
            }
        }
        let inv = 1.0 / batch.len() as f64;
        for (name, mut g) in sums {
            for v in g.data_mut() {
                *v *= inv;
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!(
                    "epoch {epoch}, batch {b}: gradient of {name} is not finite"
                )));
            }
            let p = params.get_mut(&name)?;
            let v = opt
                .velocities
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            sgd_update_in_place(p, &g, v, hp)?;
            round_to_f32(p);
            round_to_f32(v);
            if !p.all_finite() {
                return Err(Error::NonFinite(format!(
                    "epoch {epoch}, batch {b}: update made {name} non-finite"
                )));
            }
        }
    }
    Ok(EpochStats {
        loss: total_loss / data.len() as f64,
        accuracy: correct as f64 / data.len() as f64,
    })
}

/// Deterministic evaluation pass: loss, accuracy and per-clip scores.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalPass {
    pub loss: f64,
    pub accuracy: f64,
    pub scores: Vec<Tensor>,
    pub labels: Vec<usize>,
}

pub fn evaluate_pass(
    model: &Model,
    params: &ParamStore,
    data: &ClipSet,
    cfg: &TrainConfig,
    sampling: SamplingConfig,
) -> Result<EvalPass> {
    if data.is_empty() {
        return Err(Error::Usage("evaluation set is empty".into()));
    }
    let mut total = 0.0;
    let mut correct = 0usize;
    let mut scores = Vec::with_capacity(data.len());
    for clip in &data.clips {
        let idx = eval_indices(clip.frames.len(), sampling.window, sampling.steps)?;
        let frames = clip.gather(&idx);
        let mut tape = GradientTape::new();
        let bound = params.bind(&mut tape, |_| false);
        let a0 = model.frame_vars(&mut tape, &bound, data.input(&frames))?;
        let fwd = model.forward(&mut tape, &bound, &a0)?;
        let loss = compute_loss(&mut tape, &fwd, clip.label, cfg.loss, cfg.per_step_loss)?;
        total += tape.value(loss).item();
        let s = tape.value(fwd.scores).clone();
        correct += (argmax(s.data()) == clip.label) as usize;
        scores.push(s);
    }
    Ok(EvalPass {
        loss: total / data.len() as f64,
        accuracy: correct as f64 / data.len() as f64,
        scores,
        labels: data.labels(),
    })
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    /// 1-based.
    pub epoch: usize,
    /// Learning rate used during the epoch.
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

impl LogRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epoch, self.lr, self.train_loss, self.val_loss, self.val_acc
        )
    }
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub last: Checkpoint,
    /// State after the epoch the schedule last counted as an improvement.
    pub best: Checkpoint,
    /// Rows produced by this call.
    pub log: Vec<LogRow>,
}

fn write_checkpoint(dir: Option<&Path>, name: &str, ckpt: &Checkpoint) -> Result<()> {
    match dir {
        Some(d) => ckpt.save(&d.join(name)),
        None => Ok(()),
    }
}

/// Trains from `start` until `cfg.epochs` epochs are complete.
///
/// With an output directory, `last.pcck` is rewritten after every epoch,
/// `best.pcck` whenever validation loss improves, and one row per epoch is
/// appended to `train_log.csv`. Starting from epoch 0 the log is recreated;
/// a resumed run appends to it.
pub fn fit(
    model: &Model,
    train: &ClipSet,
    val: &ClipSet,
    cfg: &TrainConfig,
    sampling: SamplingConfig,
    start: Checkpoint,
    out_dir: Option<&Path>,
) -> Result<FitOutcome> {
    cfg.validate()?;
    if start.rng.seed != cfg.seed {
        return Err(Error::Config(format!(
            "checkpoint was trained with seed {}, config says {}",
            start.rng.seed, cfg.seed
        )));
    }
    let log_path = out_dir.map(|d| d.join(LOG_FILE));
    if let Some(path) = &log_path {
        if start.epoch == 0 || !path.exists() {
            fs::write(path, format!("{LOG_HEADER}\n")).map_err(|e| Error::io(path, e))?;
        }
    }
    let mut best = match out_dir.map(|d| d.join(BEST_CHECKPOINT)) {
        Some(p) if start.epoch > 0 && p.exists() => Checkpoint::load(&p)?,
        _ => start.clone(),
    };
    let mut state = start;
    if state.epoch == 0 {
        write_checkpoint(out_dir, BEST_CHECKPOINT, &state)?;
    }
    write_checkpoint(out_dir, LAST_CHECKPOINT, &state)?;
    let mut log = Vec::new();
    while state.epoch < cfg.epochs {
        let epoch = state.epoch;
        let lr = state.optimizer.lr;
        let stats = train_epoch(
            model,
            &mut state.params,
            &mut state.optimizer,
            train,
            cfg,
            sampling,
            epoch,
        )?;
        let v = evaluate_pass(model, &state.params, val, cfg, sampling)?;
        if !v.loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "epoch {epoch}: validation loss is {}",
                v.loss
            )));
        }
        let event = plateau_schedule(&mut state.optimizer, v.loss, cfg.plateau());
        state.epoch += 1;
        state.rng.next_epoch = state.epoch;
        let row = LogRow {
            epoch: state.epoch,
            lr,
            train_loss: stats.loss,
            val_loss: v.loss,
            val_acc: v.accuracy,
        };
        if let Some(path) = &log_path {
            let mut f = OpenOptions::new()
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            writeln!(f, "{}", row.to_csv()).map_err(|e| Error::io(path, e))?;
        }
        log.push(row);
        if event == PlateauEvent::Improved {
            best = state.clone();
            write_checkpoint(out_dir, BEST_CHECKPOINT, &best)?;
        }
        write_checkpoint(out_dir, LAST_CHECKPOINT, &state)?;
    }
    Ok(FitOutcome {
        last: state,
        best,
        log,
    })
}
