mod common;

use common::{grad_vs_fd, random_tensor, rng, small_model};
use prednet_core::error::Error;
use prednet_core::head::{self, aggregate_scores, fuse_step_features, HEAD_BIAS, HEAD_WEIGHT};
use prednet_core::model::{FrameInput, Model};
use prednet_core::params::ParamStore;
use prednet_core::prednet::{
    conv_lstm_step, prediction_error_loss, ErrorMode, ErrorWeights, PredNet, PredNetConfig, StepOutput,
};
use prednet_core::tape::GradientTape;
use prednet_core::tensor::Tensor;
use prednet_core::train::{compute_loss, sgd_update_in_place, LossMode, SgdParams};
use proptest::prelude::*;

fn tiny(error_mode: ErrorMode, time_steps: usize) -> PredNetConfig {
    PredNetConfig {
        input_channels: 3,
        repr_channels: vec![2, 2],
        height: 4,
        width: 4,
        time_steps,
        kernel_size: 3,
        error_mode,
    }
}

fn net_and_params(cfg: PredNetConfig, seed: u64) -> (PredNet, ParamStore) {
    let net = PredNet::new(cfg).unwrap();
    let mut params = ParamStore::new();
    net.init_params(&mut params, &mut rng(seed));
    (net, params)
}

fn random_frames(cfg: &PredNetConfig, seed: u64) -> Vec<Tensor> {
    let mut r = rng(seed);
    (0..cfg.time_steps)
        .map(|_| random_tensor(&mut r, &[cfg.input_channels, cfg.height, cfg.width], 0.0, 1.0))
        .collect()
}

#[test]
fn conv_lstm_zero_weights_hand_values() {
    let c = Tensor::new(vec![1, 1, 2], vec![0.8, -2.0]).unwrap();
    let mut tape = GradientTape::new();
    let x = tape.constant(Tensor::full(&[2, 1, 2], 3.0));
    let h = tape.constant(Tensor::zeros(&[1, 1, 2]));
    let cell = tape.constant(c.clone());
    let w = tape.constant(Tensor::zeros(&[4, 3, 3, 3]));
    let b = tape.constant(Tensor::zeros(&[4]));
    let (h2, c2) = conv_lstm_step(&mut tape, x, h, cell, w, b).unwrap();
    for (i, &cv) in c.data().iter().enumerate() {
        assert!((tape.value(c2).data()[i] - 0.5 * cv).abs() < 1e-15);
        assert!((tape.value(h2).data()[i] - 0.5 * (0.5 * cv).tanh()).abs() < 1e-15);
    }
}

#[test]
fn conv_lstm_saturated_forget_on_zero_state() {
    let mut tape = GradientTape::new();
    let x = tape.constant(Tensor::zeros(&[1, 2, 2]));
    let h = tape.constant(Tensor::zeros(&[1, 2, 2]));
    let cell = tape.constant(Tensor::zeros(&[1, 2, 2]));
    let w = tape.constant(Tensor::zeros(&[4, 2, 3, 3]));
    let b = tape.constant(Tensor::vector(vec![0.0, 1000.0, 0.0, 0.0]));
    let (h2, c2) = conv_lstm_step(&mut tape, x, h, cell, w, b).unwrap();
    assert!(tape.value(c2).max_abs() < 1e-12);
    assert!(tape.value(h2).max_abs() < 1e-12);
}

#[test]
fn conv_lstm_rejects_channel_mismatch() {
    let mut tape = GradientTape::new();
    let x = tape.constant(Tensor::zeros(&[2, 2, 2]));
    let h = tape.constant(Tensor::zeros(&[1, 2, 2]));
    let cell = tape.constant(Tensor::zeros(&[1, 2, 2]));
    let w = tape.constant(Tensor::zeros(&[4, 2, 3, 3]));
    let b = tape.constant(Tensor::zeros(&[4]));
    assert!(matches!(conv_lstm_step(&mut tape, x, h, cell, w, b), Err(Error::Config(_))));
}

#[test]
fn conv_lstm_gradients_match_fd() {
    let mut r = rng(5);
    let inputs = vec![
        random_tensor(&mut r, &[2, 3, 3], -1.0, 1.0),
        random_tensor(&mut r, &[2, 3, 3], -1.0, 1.0),
        random_tensor(&mut r, &[2, 3, 3], -1.0, 1.0),
        random_tensor(&mut r, &[8, 4, 3, 3], -0.5, 0.5),
        random_tensor(&mut r, &[8], -0.5, 0.5),
    ];
    let err = grad_vs_fd(&inputs, 1e-5, |t, v| {
        let (h, _) = conv_lstm_step(t, v[0], v[1], v[2], v[3], v[4]).unwrap();
        t.sum(h)
    });
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn first_step_with_zero_weights() {
    let cfg = tiny(ErrorMode::RectifiedSplit, 1);
    let (net, mut params) = net_and_params(cfg.clone(), 1);
    params.zero_all();
    let frames = random_frames(&cfg, 2);
    let out = net.run(&params, &frames).unwrap();
    let s = &out[0];
    assert_eq!(s.t, 1);
    for l in 0..2 {
        assert_eq!(s.r[l].max_abs(), 0.0);
        assert_eq!(s.ahat[l].max_abs(), 0.0);
    }
    let expect = Tensor::stack(&[frames[0].clone(), Tensor::zeros(frames[0].shape())]).unwrap();
    assert_eq!(s.e[0].data(), expect.data());
}

#[test]
fn zero_frames_and_weights_stay_zero() {
    let cfg = tiny(ErrorMode::RectifiedSplit, 4);
    let (net, mut params) = net_and_params(cfg.clone(), 1);
    params.zero_all();
    let zeros = vec![Tensor::zeros(&[3, 4, 4]); 4];
    for s in net.run(&params, &zeros).unwrap() {
        for t in s.r.iter().chain(&s.ahat).chain(&s.e) {
            assert_eq!(t.max_abs(), 0.0);
        }
    }
}

#[test]
fn error_unit_modes() {
    for mode in [ErrorMode::RectifiedSplit, ErrorMode::Absolute] {
        let mut tape = GradientTape::new();
        let a = tape.constant(Tensor::vector(vec![5.0, 1.0]));
        let same = prednet_core::prednet::error_unit(&mut tape, mode, a, a).unwrap();
        assert_eq!(tape.value(same).max_abs(), 0.0);
    }
    let mut tape = GradientTape::new();
    let a = tape.constant(Tensor::new(vec![1, 1, 1], vec![5.0]).unwrap());
    let ahat = tape.constant(Tensor::new(vec![1, 1, 1], vec![2.0]).unwrap());
    let e = prednet_core::prednet::error_unit(&mut tape, ErrorMode::RectifiedSplit, a, ahat).unwrap();
    assert_eq!(tape.value(e).data(), &[3.0, 0.0]);
}

#[test]
fn error_sign_and_symmetry_properties() {
    for (mode, seed) in [(ErrorMode::RectifiedSplit, 3), (ErrorMode::Absolute, 4)] {
        let cfg = tiny(mode, 4);
        let (net, params) = net_and_params(cfg.clone(), seed);
        for s in net.run(&params, &random_frames(&cfg, seed)).unwrap() {
            for e in &s.e {
                let half = e.len() / 2;
                assert!(e.data().iter().all(|&v| v >= 0.0));
                if mode == ErrorMode::Absolute {
                    assert_eq!(e.data()[..half], e.data()[half..]);
                }
            }
        }
    }
}

#[test]
fn wrong_feature_channels_is_input_error() {
    let cfg = tiny(ErrorMode::RectifiedSplit, 2);
    let (net, params) = net_and_params(cfg, 1);
    let frames = vec![Tensor::zeros(&[4, 4, 4]); 2];
    assert!(matches!(net.run(&params, &frames), Err(Error::Input(_))));
    let short = vec![Tensor::zeros(&[3, 4, 4]); 1];
    assert!(matches!(net.run(&params, &short), Err(Error::Input(_))));
}

#[test]
fn update_before_init_is_usage_error() {
    let cfg = tiny(ErrorMode::RectifiedSplit, 2);
    let (net, params) = net_and_params(cfg, 1);
    let mut tape = GradientTape::new();
    let bound = params.bind(&mut tape, |_| false);
    let empty = prednet_core::prednet::PredNetState {
        steps_done: 1,
        r: vec![],
        cell: vec![],
        e: vec![],
    };
    assert!(matches!(
        net.update_representations(&mut tape, &bound, &empty),
        Err(Error::Usage(_))
    ));
}

#[test]
fn single_step_unroll_equals_step() {
    let cfg = tiny(ErrorMode::RectifiedSplit, 1);
    let (net, params) = net_and_params(cfg.clone(), 9);
    let frames = random_frames(&cfg, 9);
    let unrolled = net.run(&params, &frames).unwrap();
    let mut tape = GradientTape::new();
    let bound = params.bind(&mut tape, |_| false);
    let state = net.zero_state(&mut tape);
    let a0 = tape.constant(frames[0].clone());
    let (_, step) = net.step(&mut tape, &bound, &state, a0).unwrap();
    assert_eq!(unrolled, vec![step.materialize(&tape)]);
    assert_eq!(net.run(&params, &frames).unwrap(), unrolled);
}

fn r0_at(net: &PredNet, params: &ParamStore, frames: &[Tensor], t: usize) -> Tensor {
    net.run(params, frames).unwrap()[t].r[0].clone()
}

#[test]
fn layer_zero_sees_new_layer_one_representation() {
    let cfg = tiny(ErrorMode::RectifiedSplit, 2);
    let (net, params) = net_and_params(cfg.clone(), 12);
    let frames = random_frames(&cfg, 12);
    let base = r0_at(&net, &params, &frames, 1);
    let mut bumped = params.clone();
    for v in bumped.get_mut("prednet.l1.lstm.weight").unwrap().data_mut() {
        *v += 0.05;
    }
    let moved = r0_at(&net, &bumped, &frames, 1);
    let diff = base.zip_with(&moved, |a, b| (a - b).abs()).unwrap().max_abs();
    assert!(diff > 1e-6, "layer-0 R ignored layer 1: {diff}");
}

#[test]
fn representation_ignores_current_frame() {
    let cfg = tiny(ErrorMode::RectifiedSplit, 3);
    let (net, params) = net_and_params(cfg.clone(), 13);
    let frames = random_frames(&cfg, 13);
    let mut changed = frames.clone();
    changed[2] = changed[2].map(|v| v + 1.0);
    let a = net.run(&params, &frames).unwrap();
    let b = net.run(&params, &changed).unwrap();
    assert_eq!(a[2].r, b[2].r);
    assert_ne!(a[2].e, b[2].e);
}

fn arb_config() -> impl Strategy<Value = PredNetConfig> {
    (
        1..=4usize,
        prop::collection::vec(1..=4usize, 1..=3),
        1..=5usize,
        1..=5usize,
        1..=3usize,
        prop_oneof![Just(1usize), Just(3usize)],
        prop_oneof![Just(ErrorMode::RectifiedSplit), Just(ErrorMode::Absolute)],
    )
        .prop_map(|(c, repr, h, w, t, k, mode)| PredNetConfig {
            input_channels: c,
            repr_channels: repr,
            height: h,
            width: w,
            time_steps: t,
            kernel_size: k,
            error_mode: mode,
        })
}

fn expected_shapes(cfg: &PredNetConfig, s: &StepOutput) {
    let (h, w) = (cfg.height, cfg.width);
    let n = cfg.repr_channels.len();
    assert_eq!(s.a.len(), n);
    for l in 0..n {
        let pred = if l == 0 { cfg.input_channels } else { cfg.repr_channels[l] };
        assert_eq!(s.a[l].shape(), &[pred, h, w]);
        assert_eq!(s.ahat[l].shape(), &[pred, h, w]);
        assert_eq!(s.e[l].shape(), &[2 * pred, h, w]);
        assert_eq!(s.r[l].shape(), &[cfg.repr_channels[l], h, w]);
    }
    let fused = fuse_step_features(s).unwrap();
    assert_eq!(fused.len(), cfg.input_channels + cfg.repr_channels.iter().sum::<usize>());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn shapes_follow_config(cfg in arb_config(), seed in any::<u64>()) {
        let (net, params) = net_and_params(cfg.clone(), seed);
        let out = net.run(&params, &random_frames(&cfg, seed)).unwrap();
        prop_assert_eq!(out.len(), cfg.time_steps);
        for (i, s) in out.iter().enumerate() {
            prop_assert_eq!(s.t, i + 1);
            expected_shapes(&cfg, s);
        }
    }

    #[test]
    fn aggregation_is_order_free(
        rows in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 1..6),
        shift in 0usize..6,
    ) {
        let scores: Vec<Tensor> = rows.iter().map(|r| Tensor::vector(r.clone())).collect();
        let mut rotated = scores.clone();
        let k = shift % rotated.len();
        rotated.rotate_left(k);
        rotated.reverse();
        let a = aggregate_scores(&scores).unwrap();
        let b = aggregate_scores(&rotated).unwrap();
        prop_assert_eq!(a.data(), b.data());
        let same = aggregate_scores(&vec![scores[0].clone(); rows.len()]).unwrap();
        for (x, y) in same.data().iter().zip(scores[0].data()) {
            prop_assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }
}

#[test]
fn prediction_error_loss_examples() {
    let cfg = tiny(ErrorMode::RectifiedSplit, 3);
    let (net, mut params) = net_and_params(cfg.clone(), 1);
    params.zero_all();
    let zeros = vec![Tensor::zeros(&[3, 4, 4]); 3];
    let mut tape = GradientTape::new();
    let bound = params.bind(&mut tape, |_| false);
    let vars: Vec<_> = zeros.iter().map(|f| tape.constant(f.clone())).collect();
    let steps = net.unroll(&mut tape, &bound, &vars).unwrap();
    let loss = prediction_error_loss(&mut tape, &steps, &ErrorWeights::default_for(2, 3)).unwrap();
    assert_eq!(tape.value(loss).item(), 0.0);

    // One layer, a single weighted step, and a constant frame of 2 against a
    // zero prediction: half the error channels hold 2, so the mean is 1.
    let one = PredNetConfig {
        repr_channels: vec![2],
        time_steps: 1,
        ..cfg
    };
    let (net, mut params) = net_and_params(one, 1);
    params.zero_all();
    let mut tape = GradientTape::new();
    let bound = params.bind(&mut tape, |_| false);
    let f = tape.constant(Tensor::full(&[3, 4, 4], 2.0));
    let steps = net.unroll(&mut tape, &bound, &[f]).unwrap();
    let w = ErrorWeights { layers: vec![1.0], times: vec![1.0] };
    let loss = prediction_error_loss(&mut tape, &steps, &w).unwrap();
    assert_eq!(tape.value(loss).item(), 1.0);
    let bad = ErrorWeights { layers: vec![-1.0], times: vec![1.0] };
    assert!(matches!(prediction_error_loss(&mut tape, &steps, &bad), Err(Error::Config(_))));

    let d = ErrorWeights::default_for(2, 5);
    assert_eq!(d.layers, vec![1.0, 0.1]);
    assert_eq!(d.times, vec![0.0, 0.25, 0.25, 0.25, 0.25]);
}

#[test]
fn prediction_error_training_learns_repeated_frames() {
    let cfg = small_model(2, 5);
    let model = Model::new(cfg.clone()).unwrap();
    let mut params = model.init_params(&mut rng(31));
    let frame = random_tensor(&mut rng(32), &[3, 4, 4], 0.0, 1.0);
    let frames = vec![frame; 5];
    let hp = SgdParams { lr: 0.05, momentum: 0.0, weight_decay: 0.0 };
    let mut losses = Vec::new();
    for _ in 0..20 {
        let mut tape = GradientTape::new();
        let bound = model.bind(&mut tape, &params);
        let a0 = model.frame_vars(&mut tape, &bound, FrameInput::Features(&frames)).unwrap();
        let fwd = model.forward(&mut tape, &bound, &a0).unwrap();
        let loss = compute_loss(&mut tape, &fwd, 0, LossMode::PredictionError, false).unwrap();
        losses.push(tape.value(loss).item());
        let grads = tape.backward(loss).unwrap();
        for (name, var) in bound.iter() {
            if let Some(g) = grads.get(var) {
                let p = params.get_mut(name).unwrap();
                let mut v = Tensor::zeros(p.shape());
                sgd_update_in_place(p, g, &mut v, hp).unwrap();
            }
        }
    }
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "{losses:?}");
    }
    let out = model.prednet().run(&params, &frames).unwrap();
    let norm = |t: &Tensor| t.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm(&out[1].e[0]) < norm(&out[0].e[0]));
}

#[test]
fn fused_length_law() {
    assert_eq!(head::fused_len(2048, &[64, 64]), 2176);
    assert_eq!(head::fused_len(8, &[4, 4]), 16);
    let zero = StepOutput {
        t: 1,
        a: vec![Tensor::zeros(&[8, 2, 2]), Tensor::zeros(&[4, 2, 2])],
        ahat: vec![],
        e: vec![],
        r: vec![Tensor::zeros(&[4, 2, 2]), Tensor::zeros(&[4, 2, 2])],
    };
    let f = fuse_step_features(&zero).unwrap();
    assert_eq!(f.len(), 16);
    assert_eq!(f.max_abs(), 0.0);
}

#[test]
fn fusion_order_is_a0_then_r() {
    let s = StepOutput {
        t: 1,
        a: vec![Tensor::full(&[1, 2, 2], 1.0)],
        ahat: vec![],
        e: vec![],
        r: vec![Tensor::full(&[1, 2, 2], 2.0), Tensor::full(&[2, 2, 2], 3.0)],
    };
    assert_eq!(fuse_step_features(&s).unwrap().data(), &[1.0, 2.0, 3.0, 3.0]);
}

#[test]
fn aggregate_examples() {
    let v = Tensor::vector(vec![0.3, -1.0]);
    assert_eq!(aggregate_scores(&[v.clone(), v.clone()]).unwrap(), v);
    let m = aggregate_scores(&[Tensor::vector(vec![1.0, 0.0]), Tensor::vector(vec![0.0, 1.0])]).unwrap();
    assert_eq!(m.data(), &[0.5, 0.5]);
    assert!(matches!(aggregate_scores(&[]), Err(Error::Usage(_))));
}

#[test]
fn zero_head_weights_return_bias() {
    let model = Model::new(small_model(3, 2)).unwrap();
    let mut params = model.init_params(&mut rng(1));
    params.get_mut(HEAD_WEIGHT).unwrap().data_mut().fill(0.0);
    let bias = Tensor::vector(vec![0.1, -0.2, 0.3]);
    params.insert(HEAD_BIAS, bias.clone());
    let frames = random_frames(&model.config().prednet, 2);
    let p = model.predict_clip(&params, FrameInput::Features(&frames)).unwrap();
    for s in &p.step_scores {
        assert_eq!(s, &bias);
    }
    assert_eq!(p.label, 2);
}

#[test]
fn identity_head_on_two_classes() {
    // Zero PredNet weights leave R_0 at zero on the first step, so the fused
    // vector is [max A0, 0] and an identity head passes it through.
    let mut cfg = small_model(2, 1);
    cfg.prednet.input_channels = 1;
    cfg.prednet.repr_channels = vec![1];
    let model = Model::new(cfg).unwrap();
    let mut params = model.init_params(&mut rng(1));
    params.zero_all();
    params.insert(HEAD_WEIGHT, Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let mut frame = Tensor::zeros(&[1, 4, 4]);
    frame.data_mut()[5] = 0.7;
    let p = model.predict_clip(&params, FrameInput::Features(&[frame])).unwrap();
    assert_eq!(p.scores.data(), &[0.7, 0.0]);
    assert_eq!(p.label, 0);
}

#[test]
fn predict_constant_bias_class() {
    let model = Model::new(small_model(2, 3)).unwrap();
    let mut params = model.init_params(&mut rng(1));
    params.get_mut(HEAD_WEIGHT).unwrap().data_mut().fill(0.0);
    params.insert(HEAD_BIAS, Tensor::vector(vec![0.0, 2.0]));
    for seed in 0..5 {
        let frames = random_frames(&model.config().prednet, seed);
        assert_eq!(model.predict_clip(&params, FrameInput::Features(&frames)).unwrap().label, 1);
    }
}

#[test]
fn argmax_survives_logit_shift() {
    let model = Model::new(small_model(4, 3)).unwrap();
    let params = model.init_params(&mut rng(7));
    for seed in 0..5 {
        let frames = random_frames(&model.config().prednet, 100 + seed);
        let base = model.predict_clip(&params, FrameInput::Features(&frames)).unwrap();
        for c in [-3.0, 0.5, 40.0] {
            let mut shifted = params.clone();
            for v in shifted.get_mut(HEAD_BIAS).unwrap().data_mut() {
                *v += c;
            }
            let p = model.predict_clip(&shifted, FrameInput::Features(&frames)).unwrap();
            assert_eq!(p.label, base.label);
        }
    }
}

#[test]
fn head_length_mismatch_is_config_error() {
    let model = Model::new(small_model(2, 2)).unwrap();
    let mut params = model.init_params(&mut rng(1));
    params.insert(HEAD_WEIGHT, Tensor::zeros(&[2, 5]));
    let frames = random_frames(&model.config().prednet, 1);
    assert!(matches!(
        model.predict_clip(&params, FrameInput::Features(&frames)),
        Err(Error::Config(_))
    ));
}

#[test]
fn fuse_and_classify_gradients_match_fd() {
    let mut r = rng(40);
    let inputs = vec![
        random_tensor(&mut r, &[2, 3, 3], -1.0, 1.0),
        random_tensor(&mut r, &[3, 3, 3], -1.0, 1.0),
        random_tensor(&mut r, &[3, 5], -1.0, 1.0),
        random_tensor(&mut r, &[3], -1.0, 1.0),
    ];
    let err = grad_vs_fd(&inputs, 1e-5, |t, v| {
        let step = prednet_core::prednet::StepVars {
            t: 1,
            a: vec![v[0]],
            ahat: vec![],
            e: vec![],
            r: vec![v[1]],
        };
        let fused = head::fuse_step_vars(t, &step).unwrap();
        let s = t.linear(fused, v[2], v[3]).unwrap();
        t.softmax_cross_entropy(s, 1).unwrap()
    });
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn every_parameter_receives_gradient() {
    let model = Model::new(small_model(3, 4)).unwrap();
    let params = model.init_params(&mut rng(50));
    let frames = random_frames(&model.config().prednet, 51);
    let mut tape = GradientTape::new();
    let bound = model.bind(&mut tape, &params);
    let a0 = model.frame_vars(&mut tape, &bound, FrameInput::Features(&frames)).unwrap();
    let fwd = model.forward(&mut tape, &bound, &a0).unwrap();
    let loss = compute_loss(&mut tape, &fwd, 1, LossMode::Classification, false).unwrap();
    let grads = tape.backward(loss).unwrap();
    for (name, var) in bound.iter() {
        let g = grads.get(var).unwrap_or_else(|| panic!("{name} has no gradient"));
        assert!(g.max_abs() > 0.0, "{name} gradient is all zero");
    }
}

#[test]
fn thirty_steps_give_thirty_step_scores() {
    let mut cfg = small_model(2, 30);
    cfg.prednet.input_channels = 2;
    let model = Model::new(cfg).unwrap();
    let params = model.init_params(&mut rng(1));
    let frames = vec![Tensor::full(&[2, 4, 4], 0.5); 30];
    let p = model.predict_clip(&params, FrameInput::Features(&frames)).unwrap();
    assert_eq!(p.step_scores.len(), 30);
}
