//! Central finite differences on the f64 reference against the tape's gradients.

use dmvfn_core::net::{Dmvfn, Mode, ModelConfig, MvfbBlock, MvfbConfig};
use dmvfn_core::objective::{lap_l1, total_loss, LossConfig};
use dmvfn_core::params::{ParamStore, Session};
use dmvfn_core::routing::RoutingNet;
use dmvfn_core::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::reference::{self as r, Arr, Sig};

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-3;
/// Coordinates probed per input tensor.
pub const PROBES: usize = 40;

#[derive(Clone, Debug)]
pub struct GradOutcome {
    pub name: String,
    /// Largest forward mismatch between tape and reference, relative to the output scale.
    pub forward_err: f64,
    pub max_rel: f64,
    pub checked: usize,
    /// Probes whose ±h evaluations crossed a kink.
    pub skipped: usize,
}

impl GradOutcome {
    pub fn passed(&self) -> bool {
        self.forward_err <= 1e-5 && self.max_rel <= TOLERANCE && self.checked > 0 && self.skipped * 5 <= self.checked
    }
}

pub fn uniform(dims: &[usize], lo: f32, hi: f32, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(dims, |_| rng.gen_range(lo..hi))
}

/// Runs `build` on a tape with every input as a variable and returns the output and
/// the gradients of `Σ c ⊙ output`.
pub fn on_tape(inputs: &[Tensor], c: &Tensor, build: impl Fn(&mut Tape, &[Var]) -> Var) -> (Tensor, Vec<Tensor>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let value = tape.value(out).clone();
    let cv = tape.constant(c.clone());
    let prod = tape.mul(out, cv).unwrap();
    let loss = tape.sum(prod);
    tape.backward(loss).unwrap();
    let grads = vars.iter().map(|&v| tape.grad(v).unwrap_or_else(|| Tensor::zeros(tape.dims(v)))).collect();
    (value, grads)
}

pub fn grad_check(
    name: &str,
    inputs: &[Tensor],
    analytic: impl Fn(&[Tensor], &Tensor) -> (Tensor, Vec<Tensor>),
    reference: impl Fn(&[Arr], &mut Sig) -> Arr,
) -> GradOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(name.bytes().map(u64::from).sum());
    let base: Vec<Arr> = inputs.iter().map(Arr::from_tensor).collect();
    let mut sig0 = Sig::new();
    let ref_out = reference(&base, &mut sig0);
    let c = Arr { dims: ref_out.dims.clone(), data: (0..ref_out.data.len()).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let (out, grads) = analytic(inputs, &c.to_tensor());

    assert_eq!(out.dims(), &ref_out.dims[..], "{name}: output dims");
    let scale = ref_out.data.iter().fold(1e-6f64, |m, v| m.max(v.abs()));
    let forward_err = out.data().iter().zip(&ref_out.data).map(|(&a, &b)| (a as f64 - b).abs()).fold(0.0, f64::max) / scale;

    let project = |args: &[Arr], sig: &mut Sig| -> f64 {
        reference(args, sig).data.iter().zip(&c.data).map(|(a, b)| a * b).sum()
    };
    let (mut max_rel, mut checked, mut skipped) = (0.0f64, 0, 0);
    for (i, input) in base.iter().enumerate() {
        let len = input.data.len();
        let coords: Vec<usize> = if len <= PROBES { (0..len).collect() } else { (0..PROBES).map(|_| rng.gen_range(0..len)).collect() };
        let mut pairs = Vec::new();
        for &k in &coords {
            let mut args = base.clone();
            args[i].data[k] += STEP;
            let (mut sp, mut sm) = (Sig::new(), Sig::new());
            let fp = project(&args, &mut sp);
            args[i].data[k] -= 2.0 * STEP;
            let fm = project(&args, &mut sm);
            if sp != sm || sp != sig0 {
                skipped += 1;
                continue;
            }
            pairs.push((grads[i].data()[k] as f64, (fp - fm) / (2.0 * STEP)));
        }
        let norm = pairs.iter().fold(0.0f64, |m, p| m.max(p.1.abs()));
        let floor = (1e-3 * norm).max(1e-6);
        for (a, n) in pairs {
            max_rel = max_rel.max((a - n).abs() / a.abs().max(n.abs()).max(floor));
            checked += 1;
        }
    }
    GradOutcome { name: name.to_string(), forward_err, max_rel, checked, skipped }
}

fn tiny_block_store(scale: usize, spatial: bool, rng: &mut ChaCha8Rng) -> (ParamStore, MvfbBlock) {
    let mut store = ParamStore::new();
    let cfg = MvfbConfig { scale, motion_width: 4, spatial_width: 3, spatial_path: spatial };
    let block = MvfbBlock::new(&mut store, "b", cfg, rng).unwrap();
    randomise(&mut store, rng);
    (store, block)
}

/// Replaces every parameter with a random value so no gradient path is trivially zero.
pub fn randomise(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for p in store.iter_mut() {
        let (lo, hi) = if p.name.ends_with("prelu") { (0.1, 0.4) } else { (-0.3, 0.3) };
        p.value = uniform(p.value.dims(), lo, hi, rng);
    }
}

fn with_values(store: &ParamStore, values: &[Tensor]) -> ParamStore {
    let mut s = store.clone();
    for (p, v) in s.iter_mut().zip(values) {
        p.value = v.clone();
    }
    s
}

fn named(store: &ParamStore, values: &[Arr]) -> r::Params {
    store.iter().zip(values).map(|(p, v)| (p.name.clone(), v.clone())).collect()
}

fn mvfb_check(name: &str, scale: usize, spatial: bool, rng: &mut ChaCha8Rng) -> GradOutcome {
    let (store, block) = tiny_block_store(scale, spatial, rng);
    let (h, w) = (16, 16);
    let mut inputs = vec![
        uniform(&[1, 3, h, w], 0.0, 1.0, rng),
        uniform(&[1, 3, h, w], 0.0, 1.0, rng),
        uniform(&[1, 3, h, w], 0.0, 1.0, rng),
        uniform(&[1, 5, h, w], -2.0, 2.0, rng),
    ];
    inputs.extend(store.iter().map(|p| p.value.clone()));
    let analytic = |ins: &[Tensor], c: &Tensor| {
        let st = with_values(&store, &ins[4..]);
        let mut s = Session::new(&st, true);
        let v: Vec<Var> = ins[..4].iter().map(|t| s.tape.variable(t.clone())).collect();
        let state = dmvfn_core::net::BlockState { frame: v[2], flow: v[3] };
        let out = block.forward(&mut s, v[0], v[1], state).unwrap().state;
        let joined = s.tape.concat_channels(&[out.frame, out.flow]).unwrap();
        let value = s.tape.value(joined).clone();
        let cv = s.constant(c.clone());
        let prod = s.tape.mul(joined, cv).unwrap();
        let loss = s.tape.sum(prod);
        s.tape.backward(loss).unwrap();
        let mut grads: Vec<Tensor> = v.iter().map(|&x| s.tape.grad(x).unwrap()).collect();
        grads.extend(s.param_grads());
        (value, grads)
    };
    let reference = |a: &[Arr], sig: &mut Sig| {
        let p = named(&store, &a[4..]);
        let (f, fl) = r::mvfb(&p, "b", scale, spatial, &a[0], &a[1], &a[2], &a[3], sig);
        r::concat(&[&f, &fl])
    };
    grad_check(name, &inputs, analytic, reference)
}

fn routing_check(rng: &mut ChaCha8Rng) -> GradOutcome {
    let mut store = ParamStore::new();
    let net = RoutingNet::new(&mut store, 4, 5, rng).unwrap();
    randomise(&mut store, rng);
    let mut inputs = vec![uniform(&[2, 3, 32, 32], 0.0, 1.0, rng), uniform(&[2, 3, 32, 32], 0.0, 1.0, rng)];
    inputs.extend(store.iter().map(|p| p.value.clone()));
    let analytic = |ins: &[Tensor], c: &Tensor| {
        let st = with_values(&store, &ins[2..]);
        let mut s = Session::new(&st, true);
        let (p, q) = (s.tape.variable(ins[0].clone()), s.tape.variable(ins[1].clone()));
        let logits = net.logits(&mut s, p, q).unwrap();
        let value = s.tape.value(logits).clone();
        let cv = s.constant(c.clone());
        let prod = s.tape.mul(logits, cv).unwrap();
        let loss = s.tape.sum(prod);
        s.tape.backward(loss).unwrap();
        let mut grads = vec![s.tape.grad(p).unwrap(), s.tape.grad(q).unwrap()];
        grads.extend(s.param_grads());
        (value, grads)
    };
    let reference = |a: &[Arr], sig: &mut Sig| r::routing_logits(&named(&store, &a[2..]), &a[0], &a[1], sig);
    grad_check("routing_logits", &inputs, analytic, reference)
}

/// The train-mode chain with soft block weights and the deep-supervision loss.
fn chain_check(rng: &mut ChaCha8Rng) -> GradOutcome {
    let cfg = ModelConfig { schedule: vec![2, 1], width_x4: 3, width_x2: 3, width_x1: 3, spatial_width: 3, routing_width: 3, ..ModelConfig::default() };
    let mut model = Dmvfn::new(cfg, 1).unwrap();
    randomise(&mut model.params, rng);
    let loss_cfg = LossConfig { levels: 3, ..LossConfig::default() };
    let mut inputs = vec![
        uniform(&[2, 3, 16, 16], 0.0, 1.0, rng),
        uniform(&[2, 3, 16, 16], 0.0, 1.0, rng),
        uniform(&[2, 3, 16, 16], 0.0, 1.0, rng),
        uniform(&[2, 2], 0.2, 0.9, rng),
    ];
    let block_params: Vec<usize> = model.params.iter().enumerate().filter(|(_, p)| p.name.starts_with("block")).map(|(i, _)| i).collect();
    inputs.extend(block_params.iter().map(|&i| model.params.iter().nth(i).unwrap().value.clone()));
    let analytic = |ins: &[Tensor], c: &Tensor| {
        let mut m = model.clone();
        for (&i, v) in block_params.iter().zip(&ins[4..]) {
            m.params.iter_mut().nth(i).unwrap().value = v.clone();
        }
        let mut s = Session::new(&m.params, true);
        let v: Vec<Var> = ins[..4].iter().map(|t| s.tape.variable(t.clone())).collect();
        let out = m.forward(&mut s, v[0], v[1], v[3], Mode::Train).unwrap();
        let loss = total_loss(&mut s.tape, &out.frames, v[2], &loss_cfg, None).unwrap();
        let value = Tensor::new(&[1], vec![s.tape.value(loss).item()]).unwrap();
        let scaled = s.tape.mul_scalar(loss, c.data()[0]);
        s.tape.backward(scaled).unwrap();
        let mut grads: Vec<Tensor> = v.iter().map(|&x| s.tape.grad(x).unwrap()).collect();
        let all = s.param_grads();
        grads.extend(block_params.iter().map(|&i| all[i].clone()));
        (value, grads)
    };
    let names: Vec<String> = block_params.iter().map(|&i| model.params.iter().nth(i).unwrap().name.clone()).collect();
    let reference = |a: &[Arr], sig: &mut Sig| {
        let p: r::Params = names.iter().cloned().zip(a[4..].iter().cloned()).collect();
        let (prev, cur, target, v) = (&a[0], &a[1], &a[2], &a[3]);
        let mut frame = Arr::zeros(&prev.dims);
        let mut flow = Arr::zeros(&[2, 5, 16, 16]);
        let mut total = 0.0;
        for (i, scale) in [2usize, 1].into_iter().enumerate() {
            let (nf, nfl) = r::mvfb(&p, &format!("block{i}"), scale, true, prev, cur, &frame, &flow, sig);
            let mix = |new: &Arr, old: &Arr| {
                let per = new.data.len() / 2;
                let data = new.data.iter().zip(&old.data).enumerate().map(|(k, (a, b))| {
                    let vi = v.data[(k / per) * 2 + i];
                    vi * a + (1.0 - vi) * b
                });
                Arr { dims: new.dims.clone(), data: data.collect() }
            };
            frame = mix(&nf, &frame);
            flow = mix(&nfl, &flow);
            let weight = if i == 0 { 0.8 } else { 1.0 };
            total += weight * r::lap_l1(&frame, target, 3, sig);
        }
        Arr { dims: vec![1], data: vec![total] }
    };
    grad_check("dmvfn_train_chain", &inputs, analytic, reference)
}

/// Every gradient check of the suite, in a fixed order.
pub fn gradient_suite() -> Vec<GradOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let rng = &mut rng;
    let mut out = Vec::new();

    for (stride, pad) in [(1, 1), (2, 1), (1, 0)] {
        let ins = [uniform(&[2, 3, 7, 6], -1.0, 1.0, rng), uniform(&[4, 3, 3, 3], -1.0, 1.0, rng), uniform(&[4], -1.0, 1.0, rng)];
        out.push(grad_check(
            &format!("conv2d_s{stride}_p{pad}"),
            &ins,
            |x, c| on_tape(x, c, |t, v| t.conv2d(v[0], v[1], Some(v[2]), stride, pad).unwrap()),
            |a, _| r::conv2d(&a[0], &a[1], Some(&a[2]), stride, pad),
        ));
    }

    let ins = [uniform(&[2, 3, 5, 4], -1.0, 1.0, rng), uniform(&[3, 2, 4, 4], -1.0, 1.0, rng), uniform(&[2], -1.0, 1.0, rng)];
    out.push(grad_check(
        "conv_transpose2d_k4_s2_p1",
        &ins,
        |x, c| on_tape(x, c, |t, v| t.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1).unwrap()),
        |a, _| r::conv_transpose2d(&a[0], &a[1], Some(&a[2]), 2, 1),
    ));

    for (name, (h, w), (oh, ow)) in [("bilinear_resize_up", (5, 6), (9, 11)), ("bilinear_resize_down", (12, 10), (5, 4))] {
        let ins = [uniform(&[2, 2, h, w], -1.0, 1.0, rng)];
        out.push(grad_check(
            name,
            &ins,
            |x, c| on_tape(x, c, |t, v| t.bilinear_resize(v[0], oh, ow).unwrap()),
            |a, _| r::resize(&a[0], oh, ow),
        ));
    }

    let ins = [uniform(&[2, 3, 8, 8], 0.0, 1.0, rng), uniform(&[2, 2, 8, 8], -3.0, 3.0, rng)];
    out.push(grad_check(
        "warp",
        &ins,
        |x, c| on_tape(x, c, |t, v| t.warp(v[0], v[1]).unwrap()),
        |a, sig| r::warp(&a[0], &a[1], sig),
    ));

    let ins = [uniform(&[2, 5, 4, 3], -1.0, 1.0, rng), uniform(&[3, 5], -1.0, 1.0, rng), uniform(&[3], -1.0, 1.0, rng)];
    out.push(grad_check(
        "global_avg_pool_linear",
        &ins,
        |x, c| {
            on_tape(x, c, |t, v| {
                let p = t.global_avg_pool(v[0]).unwrap();
                t.linear(p, v[1], Some(v[2])).unwrap()
            })
        },
        |a, _| r::linear(&r::global_avg_pool(&a[0]), &a[1], Some(&a[2])),
    ));

    let ins = [uniform(&[2, 3, 4, 4], -1.0, 1.0, rng), uniform(&[3], 0.0, 0.5, rng)];
    out.push(grad_check(
        "prelu_sigmoid",
        &ins,
        |x, c| {
            on_tape(x, c, |t, v| {
                let p = t.prelu(v[0], v[1]).unwrap();
                t.sigmoid(p)
            })
        },
        |a, sig| r::sigmoid(&r::prelu(&a[0], &a[1], sig)),
    ));

    let ins = [uniform(&[2, 3, 4, 4], 0.0, 1.0, rng), uniform(&[2, 3, 4, 4], 0.0, 1.0, rng), uniform(&[2, 1, 4, 4], 0.0, 1.0, rng)];
    out.push(grad_check(
        "blend",
        &ins,
        |x, c| on_tape(x, c, |t, v| t.blend(v[0], v[1], v[2]).unwrap()),
        |a, _| r::blend(&a[0], &a[1], &a[2]),
    ));

    let ins = [uniform(&[3, 5], 0.05, 1.0, rng)];
    out.push(grad_check(
        "budget_normalize",
        &ins,
        |x, c| on_tape(x, c, |t, v| t.budget_normalize(v[0], 0.7).unwrap()),
        |a, sig| r::budget_normalize(&a[0], 0.7, sig),
    ));

    for (name, size, levels) in [("lap_l1_32_l4", 32, 4), ("lap_l1_16_l5", 16, 5), ("lap_l1_odd_l3", 13, 3)] {
        let ins = [uniform(&[1, 3, size, size], 0.0, 1.0, rng), uniform(&[1, 3, size, size], 0.0, 1.0, rng)];
        out.push(grad_check(
            name,
            &ins,
            |x, c| {
                on_tape(x, c, |t, v| {
                    lap_l1(t, v[0], v[1], levels).unwrap()
                })
            },
            |a, sig| Arr { dims: vec![1], data: vec![r::lap_l1(&a[0], &a[1], levels, sig)] },
        ));
    }

    out.push(mvfb_check("mvfb_16x16_scale4_spatial", 4, true, rng));
    out.push(mvfb_check("mvfb_16x16_scale1_no_spatial", 1, false, rng));
    out.push(routing_check(rng));
    out.push(chain_check(rng));
    out
}
