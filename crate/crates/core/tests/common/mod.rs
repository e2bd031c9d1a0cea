#![allow(dead_code)]

use prednet_core::gradcheck::{finite_difference_gradient, max_relative_error};
use prednet_core::model::ModelConfig;
use prednet_core::prednet::{ErrorMode, PredNetConfig};
use prednet_core::tape::{GradientTape, Var};
use prednet_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Direct nested-loop same-padding convolution.
pub fn conv_oracle(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Tensor {
    let (ci, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (co, k) = (kernel.shape()[0], kernel.shape()[2]);
    let p = (k as isize - 1) / 2;
    let x = input.data();
    let ker = kernel.data();
    let mut out = vec![0.0; co * h * w];
    for o in 0..co {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = bias.data()[o];
                for i in 0..ci {
                    for dy in 0..k {
                        for dx in 0..k {
                            let sy = y as isize + dy as isize - p;
                            let sx = xx as isize + dx as isize - p;
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            acc += x[(i * h + sy as usize) * w + sx as usize]
                                * ker[((o * ci + i) * k + dy) * k + dx];
                        }
                    }
                }
                out[(o * h + y) * w + xx] = acc;
            }
        }
    }
    Tensor::new(vec![co, h, w], out).unwrap()
}

/// Analytic gradients of a scalar built by `build` from one leaf per input,
/// against central differences. Returns the worst relative error.
pub fn grad_vs_fd(
    inputs: &[Tensor],
    h: f64,
    build: impl Fn(&mut GradientTape, &[Var]) -> Var,
) -> f64 {
    let eval = |xs: &[Tensor]| {
        let mut tape = GradientTape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
        let out = build(&mut tape, &vars);
        (tape, vars, out)
    };
    let (tape, vars, out) = eval(inputs);
    let grads = tape.backward(out).unwrap();
    let mut worst = 0.0f64;
    for (i, x) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[i])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(x.shape()));
        let numeric = finite_difference_gradient(
            |probe| {
                let mut xs = inputs.to_vec();
                xs[i] = probe.clone();
                let (tape, _, out) = eval(&xs);
                tape.value(out).item()
            },
            x,
            h,
        );
        worst = worst.max(max_relative_error(&analytic, &numeric, 1e-8));
    }
    worst
}

pub fn small_model(classes: usize, time_steps: usize) -> ModelConfig {
    ModelConfig {
        prednet: PredNetConfig {
            input_channels: 3,
            repr_channels: vec![2, 2],
            height: 4,
            width: 4,
            time_steps,
            kernel_size: 3,
            error_mode: ErrorMode::RectifiedSplit,
        },
        num_classes: classes,
        use_prednet: true,
        encoder: None,
    }
}

/// Feature clips for `small_model`: class `c` brightens channel `c % 3`
/// over time, so only the temporal trend separates classes 0 and 1.
pub fn feature_clips(per_class: usize, classes: usize, frames: usize, seed: u64) -> Vec<prednet_core::data::FeatureClip> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    for c in 0..classes {
        for i in 0..per_class {
            let mut fs = Vec::with_capacity(frames);
            for t in 0..frames {
                let mut f = random_tensor(&mut r, &[3, 4, 4], 0.0, 0.5);
                let ramp = t as f64 / frames as f64;
                let level = if c % 2 == 0 { ramp } else { 1.0 - ramp };
                for v in &mut f.data_mut()[(c / 2 % 3) * 16..(c / 2 % 3 + 1) * 16] {
                    *v += level;
                }
                fs.push(f.map(|v| v as f32 as f64));
            }
            let frames = Tensor::stack(&fs).unwrap();
            out.push(prednet_core::data::FeatureClip::new(frames, c, format!("c{c}_{i}"), false).unwrap());
        }
    }
    out
}
