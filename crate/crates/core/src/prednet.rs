//! The predictive coding recurrence.
//!
//! Each layer `l` keeps a representation `R_l` (the hidden state of a
//! convolutional LSTM), the LSTM memory, and the error `E_l` from the previous
//! step. One time step runs two passes:
//!
//! * **top-down**: starting at the top layer, each `R_l` is updated by a
//!   convLSTM whose input is the previous step's `E_l`, concatenated with the
//!   freshly updated `R_{l+1}` for every layer but the top;
//! * **bottom-up**: each layer predicts its input, `Â_l = relu(conv(R_l))`,
//!   the mismatch against the actual input `A_l` becomes `E_l`, and
//!   `A_{l+1} = relu(conv(E_l))` feeds the next layer.
//!
//! At the first step all states are zero and the top-down pass is skipped,
//! so the bottom-up pass compares the first frame against an all-zero
//! prediction.
//!
//! All layers share the input's spatial size; there is no pooling or
//! upsampling between layers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::tape::{GradientTape, Var};
use crate::tensor::Tensor;

/// How the error unit combines the prediction `Â` and the target `A`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMode {
    /// `concat(relu(A − Â), relu(Â − A))`.
    #[default]
    RectifiedSplit,
    /// `concat(|Â − A|, |A − Â|)`; both halves are equal.
    Absolute,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredNetConfig {
    /// Channels of the frame feature `A_0`.
    pub input_channels: usize,
    /// Representation channels per layer; its length is the layer count.
    pub repr_channels: Vec<usize>,
    pub height: usize,
    pub width: usize,
    pub time_steps: usize,
    #[serde(default = "default_kernel")]
    pub kernel_size: usize,
    #[serde(default)]
    pub error_mode: ErrorMode,
}

fn default_kernel() -> usize {
    3
}

impl PredNetConfig {
    /// 2048-channel 7×7 features, two 64-channel layers, 30 steps.
    pub fn paper() -> Self {
        PredNetConfig {
            input_channels: 2048,
            repr_channels: vec![64, 64],
            height: 7,
            width: 7,
            time_steps: 30,
            kernel_size: 3,
            error_mode: ErrorMode::RectifiedSplit,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repr_channels.is_empty() {
            return Err(Error::Config("PredNet needs at least one layer".into()));
        }
        if self.input_channels == 0 || self.repr_channels.contains(&0) {
            return Err(Error::Config("channel counts must be >= 1".into()));
        }
        if self.height == 0 || self.width == 0 || self.time_steps == 0 {
            return Err(Error::Config(
                "spatial size and time steps must be >= 1".into(),
            ));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel size {} must be odd",
                self.kernel_size
            )));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.repr_channels.len()
    }

    /// Channels of `A_l` (and `Â_l`).
    pub fn pred_channels(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_channels
        } else {
            self.repr_channels[layer]
        }
    }

    pub fn error_channels(&self, layer: usize) -> usize {
        2 * self.pred_channels(layer)
    }

    /// Channels of the convLSTM input `x` (excluding the hidden state).
    pub fn lstm_input_channels(&self, layer: usize) -> usize {
        let above = if layer + 1 < self.num_layers() {
            self.repr_channels[layer + 1]
        } else {
            0
        };
        self.error_channels(layer) + above
    }

    pub fn spatial(&self) -> [usize; 2] {
        [self.height, self.width]
    }
}

/// Parameter names for one layer.
pub(crate) fn lstm_weight(l: usize) -> String {
    format!("prednet.l{l}.lstm.weight")
}
pub(crate) fn lstm_bias(l: usize) -> String {
    format!("prednet.l{l}.lstm.bias")
}
pub(crate) fn ahat_weight(l: usize) -> String {
    format!("prednet.l{l}.ahat.weight")
}
pub(crate) fn ahat_bias(l: usize) -> String {
    format!("prednet.l{l}.ahat.bias")
}
pub(crate) fn input_weight(l: usize) -> String {
    format!("prednet.l{l}.input.weight")
}
pub(crate) fn input_bias(l: usize) -> String {
    format!("prednet.l{l}.input.bias")
}

/// Recurrent state carried between steps, as tape values.
#[derive(Clone, Debug)]
pub struct PredNetState {
    /// Steps already processed; 0 means the all-zero initial state.
    pub steps_done: usize,
    pub r: Vec<Var>,
    pub cell: Vec<Var>,
    pub e: Vec<Var>,
}

/// Units exposed by one time step, as tape values. `a[0]` is the frame
/// feature.
#[derive(Clone, Debug)]
pub struct StepVars {
    pub t: usize,
    pub a: Vec<Var>,
    pub ahat: Vec<Var>,
    pub e: Vec<Var>,
    pub r: Vec<Var>,
}

/// Units exposed by one time step, detached from any tape.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    /// 1-based time step.
    pub t: usize,
    pub a: Vec<Tensor>,
    pub ahat: Vec<Tensor>,
    pub e: Vec<Tensor>,
    pub r: Vec<Tensor>,
}

impl StepOutput {
    pub fn a0(&self) -> &Tensor {
        &self.a[0]
    }
}

impl StepVars {
    pub fn materialize(&self, tape: &GradientTape) -> StepOutput {
        let get = |vs: &[Var]| vs.iter().map(|&v| tape.value(v).clone()).collect();
        StepOutput {
            t: self.t,
            a: get(&self.a),
            ahat: get(&self.ahat),
            e: get(&self.e),
            r: get(&self.r),
        }
    }
}

/// One convLSTM update over `concat(x, h)`.
///
/// `weight` is `[4·C_h, C_x + C_h, k, k]` with gate blocks ordered
/// input, forget, output, candidate.
pub fn conv_lstm_step(
    tape: &mut GradientTape,
    x: Var,
    h: Var,
    cell: Var,
    weight: Var,
    bias: Var,
) -> Result<(Var, Var)> {
    let ch = tape.value(h).shape()[0];
    let w = tape.value(weight).shape();
    let cx = tape.value(x).shape()[0];
    if w.len() != 4 || w[0] != 4 * ch || w[1] != cx + ch {
        return Err(Error::Config(format!(
            "convLSTM weight {w:?} does not fit input of {cx} and hidden of {ch} channels"
        )));
    }
    let xh = tape.concat(&[x, h])?;
    let gates = tape.conv2d(xh, weight, bias)?;
    let gi = tape.slice(gates, 0, ch)?;
    let gf = tape.slice(gates, ch, ch)?;
    let go = tape.slice(gates, 2 * ch, ch)?;
    let gg = tape.slice(gates, 3 * ch, ch)?;
    let i = tape.sigmoid(gi);
    let f = tape.sigmoid(gf);
    let o = tape.sigmoid(go);
    let g = tape.tanh(gg);
    let keep = tape.mul(f, cell)?;
    let write = tape.mul(i, g)?;
    let new_cell = tape.add(keep, write)?;
    let squashed = tape.tanh(new_cell);
    let new_h = tape.mul(o, squashed)?;
    Ok((new_h, new_cell))
}

/// Error unit for one layer.
pub fn error_unit(tape: &mut GradientTape, mode: ErrorMode, a: Var, ahat: Var) -> Result<Var> {
    match mode {
        ErrorMode::RectifiedSplit => {
            let under = tape.sub(a, ahat)?;
            let over = tape.sub(ahat, a)?;
            let pos = tape.relu(under);
            let neg = tape.relu(over);
            tape.concat(&[pos, neg])
        }
        ErrorMode::Absolute => {
            let d1 = tape.sub(ahat, a)?;
            let d2 = tape.sub(a, ahat)?;
            let h1 = tape.abs(d1);
            let h2 = tape.abs(d2);
            tape.concat(&[h1, h2])
        }
    }
}

/// The stacked predictive coding network.
#[derive(Clone, Debug)]
pub struct PredNet {
    cfg: PredNetConfig,
}

impl PredNet {
    pub fn new(cfg: PredNetConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(PredNet { cfg })
    }

    pub fn config(&self) -> &PredNetConfig {
        &self.cfg
    }

    /// Kernels uniform in ±1/√fan_in, biases 0, forget-gate bias +1.
    pub fn init_params(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let c = &self.cfg;
        let k = c.kernel_size;
        for l in 0..c.num_layers() {
            let hid = c.repr_channels[l];
            let cin = c.lstm_input_channels(l) + hid;
            store.init_uniform(&lstm_weight(l), &[4 * hid, cin, k, k], cin * k * k, rng);
            let mut bias = Tensor::zeros(&[4 * hid]);
            bias.data_mut()[hid..2 * hid].fill(1.0);
            store.insert(lstm_bias(l), bias);

            let pc = c.pred_channels(l);
            store.init_uniform(&ahat_weight(l), &[pc, hid, k, k], hid * k * k, rng);
            store.init_const(&ahat_bias(l), &[pc], 0.0);

            if l + 1 < c.num_layers() {
                let ec = c.error_channels(l);
                let out = c.repr_channels[l + 1];
                store.init_uniform(&input_weight(l + 1), &[out, ec, k, k], ec * k * k, rng);
                store.init_const(&input_bias(l + 1), &[out], 0.0);
            }
        }
    }

    pub fn zero_state(&self, tape: &mut GradientTape) -> PredNetState {
        let c = &self.cfg;
        let [h, w] = c.spatial();
        let mut state = PredNetState {
            steps_done: 0,
            r: Vec::new(),
            cell: Vec::new(),
            e: Vec::new(),
        };
        for l in 0..c.num_layers() {
            let hid = c.repr_channels[l];
            state.r.push(tape.constant(Tensor::zeros(&[hid, h, w])));
            state.cell.push(tape.constant(Tensor::zeros(&[hid, h, w])));
            state.e.push(tape.constant(Tensor::zeros(&[c.error_channels(l), h, w])));
        }
        state
    }

    fn check_state(&self, state: &PredNetState) -> Result<()> {
        let n = self.cfg.num_layers();
        if state.r.len() != n || state.cell.len() != n || state.e.len() != n {
            return Err(Error::Usage(format!(
                "state has {} layers but the network has {n}; start from zero_state()",
                state.r.len()
            )));
        }
        Ok(())
    }

    /// Top-down pass: new `(R, Cell)` for every layer, updated top layer
    /// first.
    pub fn update_representations(
        &self,
        tape: &mut GradientTape,
        params: &Bound,
        prev: &PredNetState,
    ) -> Result<(Vec<Var>, Vec<Var>)> {
        self.check_state(prev)?;
        let n = self.cfg.num_layers();
        let mut r = prev.r.clone();
        let mut cell = prev.cell.clone();
        for l in (0..n).rev() {
            let x = if l + 1 < n {
                tape.concat(&[prev.e[l], r[l + 1]])?
            } else {
                prev.e[l]
            };
            let (h, c) = conv_lstm_step(
                tape,
                x,
                prev.r[l],
                prev.cell[l],
                params.var(&lstm_weight(l))?,
                params.var(&lstm_bias(l))?,
            )?;
            r[l] = h;
            cell[l] = c;
        }
        Ok((r, cell))
    }

    /// Bottom-up pass: returns `(Â, E, A)` per layer.
    pub fn propagate_predictions(
        &self,
        tape: &mut GradientTape,
        params: &Bound,
        r: &[Var],
        a0: Var,
    ) -> Result<(Vec<Var>, Vec<Var>, Vec<Var>)> {
        let c = &self.cfg;
        let shape = tape.value(a0).shape();
        if shape != [c.input_channels, c.height, c.width] {
            return Err(Error::Input(format!(
                "frame feature has shape {shape:?}, expected [{}, {}, {}]",
                c.input_channels, c.height, c.width
            )));
        }
        let n = c.num_layers();
        let mut ahat = Vec::with_capacity(n);
        let mut e = Vec::with_capacity(n);
        let mut a = Vec::with_capacity(n);
        a.push(a0);
        for l in 0..n {
            let pre = tape.conv2d(r[l], params.var(&ahat_weight(l))?, params.var(&ahat_bias(l))?)?;
            let pred = tape.relu(pre);
            let err = error_unit(tape, c.error_mode, a[l], pred)?;
            ahat.push(pred);
            e.push(err);
            if l + 1 < n {
                let pre = tape.conv2d(
                    err,
                    params.var(&input_weight(l + 1))?,
                    params.var(&input_bias(l + 1))?,
                )?;
                a.push(tape.relu(pre));
            }
        }
        Ok((ahat, e, a))
    }

    /// One full time step: top-down (skipped on the first step), then
    /// bottom-up.
    pub fn step(
        &self,
        tape: &mut GradientTape,
        params: &Bound,
        state: &PredNetState,
        a0: Var,
    ) -> Result<(PredNetState, StepVars)> {
        self.check_state(state)?;
        let (r, cell) = if state.steps_done == 0 {
            (state.r.clone(), state.cell.clone())
        } else {
            self.update_representations(tape, params, state)?
        };
        let (ahat, e, a) = self.propagate_predictions(tape, params, &r, a0)?;
        let t = state.steps_done + 1;
        let next = PredNetState {
            steps_done: t,
            r: r.clone(),
            cell,
            e: e.clone(),
        };
        Ok((next, StepVars { t, a, ahat, e, r }))
    }

    /// Threads the state through one step per frame.
    pub fn unroll(
        &self,
        tape: &mut GradientTape,
        params: &Bound,
        frames: &[Var],
    ) -> Result<Vec<StepVars>> {
        if frames.len() != self.cfg.time_steps {
            return Err(Error::Input(format!(
                "clip has {} frames, network unrolls {} steps",
                frames.len(),
                self.cfg.time_steps
            )));
        }
        let mut state = self.zero_state(tape);
        let mut out = Vec::with_capacity(frames.len());
        for &frame in frames {
            let (next, step) = self.step(tape, params, &state, frame)?;
            state = next;
            out.push(step);
        }
        Ok(out)
    }

    /// Untaped convenience: runs `frames` with fixed parameters.
    pub fn run(&self, params: &ParamStore, frames: &[Tensor]) -> Result<Vec<StepOutput>> {
        let mut tape = GradientTape::new();
        let bound = params.bind(&mut tape, |_| false);
        let vars: Vec<Var> = frames.iter().map(|f| tape.constant(f.clone())).collect();
        let steps = self.unroll(&mut tape, &bound, &vars)?;
        Ok(steps.iter().map(|s| s.materialize(&tape)).collect())
    }
}

/// Weights for [`prediction_error_loss`].
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorWeights {
    pub layers: Vec<f64>,
    pub times: Vec<f64>,
}

impl ErrorWeights {
    /// Layer weights (1, 0.1, 0.1, …); step 1 weighted 0 and the remaining
    /// steps 1/(T−1) each.
    pub fn default_for(num_layers: usize, time_steps: usize) -> Self {
        let layers = (0..num_layers).map(|l| if l == 0 { 1.0 } else { 0.1 }).collect();
        let times = (0..time_steps)
            .map(|t| if t == 0 { 0.0 } else { 1.0 / (time_steps - 1) as f64 })
            .collect();
        ErrorWeights { layers, times }
    }
}

/// `Σ_t μ_t Σ_l λ_l · mean(E_l at t)`.
pub fn prediction_error_loss(
    tape: &mut GradientTape,
    steps: &[StepVars],
    weights: &ErrorWeights,
) -> Result<Var> {
    if weights.layers.iter().chain(&weights.times).any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(Error::Config("error-loss weights must be finite and >= 0".into()));
    }
    if weights.times.len() != steps.len() {
        return Err(Error::Config(format!(
            "{} time weights for {} steps",
            weights.times.len(),
            steps.len()
        )));
    }
    let mut terms = Vec::new();
    for (step, &mu) in steps.iter().zip(&weights.times) {
        if weights.layers.len() != step.e.len() {
            return Err(Error::Config(format!(
                "{} layer weights for {} layers",
                weights.layers.len(),
                step.e.len()
            )));
        }
        if mu == 0.0 {
            continue;
        }
        for (&e, &lambda) in step.e.iter().zip(&weights.layers) {
            if lambda == 0.0 {
                continue;
            }
            let m = tape.mean(e);
            terms.push(tape.scale(m, mu * lambda));
        }
    }
    if terms.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}
