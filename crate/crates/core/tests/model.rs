use dmvfn_core::net::{predict_sequence, Dmvfn, Mode, ModelConfig};
use dmvfn_core::params::Session;
use dmvfn_core::routing::RoutingMode;
use dmvfn_core::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config() -> ModelConfig {
    ModelConfig { width_x4: 6, width_x2: 5, width_x1: 4, spatial_width: 3, routing_width: 4, ..ModelConfig::default() }
}

/// A model whose merge layers are randomised so every block changes the prediction.
fn active_model(seed: u64) -> Dmvfn {
    let mut model = Dmvfn::new(small_config(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for p in model.params.iter_mut().filter(|p| p.name.contains("merge")) {
        p.value = Tensor::from_fn(p.value.dims(), |_| rng.gen_range(-0.05..0.05));
    }
    model
}

fn frames(n: usize, seed: u64) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = || Tensor::from_fn(&[n, 3, 16, 16], |_| rng.gen_range(0.0..1.0));
    (f(), f())
}

fn run(model: &Dmvfn, prev: &Tensor, cur: &Tensor, v: Tensor, mode: Mode) -> (Vec<Tensor>, Tensor) {
    let mut s = Session::new(&model.params, false);
    let (p, c, v) = (s.constant(prev.clone()), s.constant(cur.clone()), s.constant(v));
    let out = model.forward(&mut s, p, c, v, mode).unwrap();
    (out.frames.iter().map(|&f| s.tape.value(f).clone()).collect(), out.prediction)
}

#[test]
fn all_ones_routing_matches_sequential_network_exactly() {
    let model = active_model(3);
    let (prev, cur) = frames(2, 1);
    let k = model.len();
    for mode in [Mode::Train, Mode::Infer] {
        let (routed, _) = run(&model, &prev, &cur, Tensor::ones(&[2, k]), mode);
        let mut s = Session::new(&model.params, false);
        let (p, c) = (s.constant(prev.clone()), s.constant(cur.clone()));
        let plain = model.forward_sequential(&mut s, p, c).unwrap();
        for (a, b) in routed.iter().zip(&plain) {
            assert_eq!(a.data(), s.tape.value(b.frame).data());
        }
    }
}

#[test]
fn only_first_block_passes_its_output_through() {
    let model = active_model(4);
    let (prev, cur) = frames(1, 2);
    let k = model.len();
    let mut v = vec![0.0; k];
    v[0] = 1.0;
    let (out, _) = run(&model, &prev, &cur, Tensor::new(&[1, k], v).unwrap(), Mode::Infer);
    for f in &out[1..] {
        assert_eq!(f.data(), out[0].data());
    }
    assert!(out[0].max_abs_diff(&cur) > 0.0);
}

#[test]
fn empty_routing_falls_back_to_last_frame() {
    let model = active_model(5);
    let (prev, cur) = frames(2, 3);
    let k = model.len();
    let mut v = vec![1.0; 2 * k];
    v[..k].iter_mut().for_each(|x| *x = 0.0);
    let (_, pred) = run(&model, &prev, &cur, Tensor::new(&[2, k], v).unwrap(), Mode::Infer);
    assert_eq!(pred.batch_slice(0, 1).unwrap(), cur.batch_slice(0, 1).unwrap());
    assert_ne!(pred.batch_slice(1, 1).unwrap(), cur.batch_slice(1, 1).unwrap());
}

#[test]
fn infer_mode_rejects_soft_routing() {
    let model = active_model(6);
    let (prev, cur) = frames(1, 4);
    let mut s = Session::new(&model.params, false);
    let (p, c) = (s.constant(prev), s.constant(cur));
    let v = s.constant(Tensor::full(&[1, model.len()], 0.3));
    assert!(model.forward(&mut s, p, c, v, Mode::Infer).is_err());
}

#[test]
fn single_step_prediction_equals_forward() {
    let model = active_model(7);
    let (prev, cur) = frames(1, 5);
    let seq = predict_sequence(&model, &prev, &cur, 1, &RoutingMode::AlwaysOn, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let (_, pred) = run(&model, &prev, &cur, Tensor::ones(&[1, model.len()]), Mode::Infer);
    assert_eq!(seq, vec![pred]);
}

#[test]
fn second_step_consumes_current_frame_and_prediction() {
    let model = active_model(8);
    let (prev, cur) = frames(1, 6);
    let mode = RoutingMode::AlwaysOn;
    let seq = predict_sequence(&model, &prev, &cur, 2, &mode, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let next = predict_sequence(&model, &cur, &seq[0], 1, &mode, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(seq[1], next[0]);
    assert!(predict_sequence(&model, &prev, &cur, 0, &mode, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

#[test]
fn fresh_model_keeps_constant_scene_constant() {
    let model = Dmvfn::new(small_config(), 9).unwrap();
    let c = Tensor::full(&[1, 3, 16, 16], 0.37);
    let mode = RoutingMode::Stebs { beta: 0.5, threshold: false };
    let seq = predict_sequence(&model, &c, &c, 4, &mode, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    for f in seq {
        assert!(f.max_abs_diff(&c) <= 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn blended_and_skipping_paths_agree_on_binary_routing(bits in proptest::collection::vec(any::<bool>(), 18), seed in 0u64..100) {
        let model = active_model(10);
        let (prev, cur) = frames(2, seed);
        let v = Tensor::new(&[2, 9], bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()).unwrap();
        let (train, pt) = run(&model, &prev, &cur, v.clone(), Mode::Train);
        let (infer, pi) = run(&model, &prev, &cur, v, Mode::Infer);
        for (a, b) in train.iter().zip(&infer) {
            prop_assert!(a.max_abs_diff(b) <= 1e-6);
        }
        prop_assert!(pt.max_abs_diff(&pi) <= 1e-6);
    }
}
