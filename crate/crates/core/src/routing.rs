//! Per-sample block selection: the routing network, straight-through Bernoulli
//! sampling with budget normalisation, the Gumbel-Softmax relaxation, and the
//! always-on / random baselines.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::ops_support::{budget_normalize_rows, sigmoid};
use crate::error::{Error, Result};
use crate::net::layers::{ConvPrelu, Linear};
use crate::params::{ParamStore, Session};
use crate::tensor::Tensor;
use crate::Var;

/// Factor by which the frame pair is shrunk before the routing convolutions.
pub const ROUTING_DOWNSAMPLE: usize = 4;

/// `Linear(AvgPool(Convs(prev, cur)))` emitting one logit per block.
#[derive(Clone, Debug)]
pub struct RoutingNet {
    pub convs: Vec<ConvPrelu>,
    pub head: Linear,
    pub blocks: usize,
}

impl RoutingNet {
    pub fn new(store: &mut ParamStore, width: usize, blocks: usize, rng: &mut impl Rng) -> Result<Self> {
        let convs = vec![
            ConvPrelu::new(store, "routing.conv.0", 6, width, 3, 2, 1, rng)?,
            ConvPrelu::new(store, "routing.conv.1", width, width, 3, 2, 1, rng)?,
        ];
        let head = Linear::zeroed(store, "routing.head", width, blocks)?;
        Ok(Self { convs, head, blocks })
    }

    /// Raw routing logits `ṽ`, one row of `blocks` values per sample.
    pub fn logits(&self, s: &mut Session, prev: Var, cur: Var) -> Result<Var> {
        if s.tape.dims(prev) != s.tape.dims(cur) {
            return Err(Error::shape("routing", format!("{:?} vs {:?}", s.tape.dims(prev), s.tape.dims(cur))));
        }
        let (_, _, h, w) = s.tape.value(prev).nchw()?;
        let pair = s.tape.concat_channels(&[prev, cur])?;
        let mut x = s.tape.bilinear_resize(pair, (h / ROUTING_DOWNSAMPLE).max(1), (w / ROUTING_DOWNSAMPLE).max(1))?;
        for layer in &self.convs {
            x = layer.forward(s, x)?;
        }
        let pooled = s.tape.global_avg_pool(x)?;
        self.head.forward(s, pooled)
    }
}

/// How the routing vector is produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum RoutingMode {
    /// Every block runs; no routing network is consulted.
    AlwaysOn,
    /// Each block is kept independently with probability `p`.
    Random { p: f32 },
    /// Gumbel-Softmax relaxation with an exponentially decayed temperature and a
    /// penalty on the mean selection.
    Gumbel { tau_start: f32, tau_end: f32, reg_weight: f32 },
    /// Straight-through Bernoulli sampling of budget-normalised probabilities.
    /// `threshold` replaces inference-time sampling with `w̃ ≥ 0.5`.
    Stebs {
        beta: f32,
        #[serde(default)]
        threshold: bool,
    },
}

impl Default for RoutingMode {
    fn default() -> Self {
        RoutingMode::Stebs { beta: 0.5, threshold: false }
    }
}

impl RoutingMode {
    pub fn gumbel() -> Self {
        RoutingMode::Gumbel { tau_start: 5.0, tau_end: 0.1, reg_weight: 0.01 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            RoutingMode::AlwaysOn => Ok(()),
            RoutingMode::Random { p } if (0.0..=1.0).contains(&p) => Ok(()),
            RoutingMode::Random { p } => Err(Error::Config(format!("random routing probability {p} outside [0, 1]"))),
            RoutingMode::Gumbel { tau_start, tau_end, reg_weight } => {
                if !(tau_end > 0.0 && tau_start >= tau_end) {
                    return Err(Error::Config(format!("need tau_start ≥ tau_end > 0, got {tau_start}, {tau_end}")));
                }
                if reg_weight < 0.0 {
                    return Err(Error::Config(format!("negative regulariser weight {reg_weight}")));
                }
                Ok(())
            }
            RoutingMode::Stebs { beta, .. } if beta > 0.0 => Ok(()),
            RoutingMode::Stebs { beta, .. } => Err(Error::Config(format!("beta must be positive, got {beta}"))),
        }
    }

    /// Same mode with the inference budget replaced (only meaningful for STEBS).
    pub fn with_beta(&self, beta: f32) -> Self {
        match *self {
            RoutingMode::Stebs { threshold, .. } => RoutingMode::Stebs { beta, threshold },
            ref other => other.clone(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RoutingMode::AlwaysOn => "always_on",
            RoutingMode::Random { .. } => "random",
            RoutingMode::Gumbel { .. } => "gumbel",
            RoutingMode::Stebs { .. } => "stebs",
        }
    }

    /// Gumbel temperature at `step` of `total`, decayed exponentially; 1 for other modes.
    pub fn temperature(&self, step: usize, total: usize) -> f32 {
        match *self {
            RoutingMode::Gumbel { tau_start, tau_end, .. } => {
                let t = if total == 0 { 1.0 } else { (step as f64 / total as f64).min(1.0) };
                (tau_start as f64 * (tau_end as f64 / tau_start as f64).powf(t)) as f32
            }
            _ => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Infer,
}

/// Routing decision for a batch.
#[derive(Clone, Debug)]
pub struct RoutingVector {
    /// Raw logits `ṽ` (absent for modes that ignore the network).
    pub logits: Option<Tensor>,
    /// Selection probabilities `w̃` (`n × blocks`).
    pub probs: Tensor,
    /// Block weights `v`: binary except for Gumbel at training time.
    pub v: Tensor,
    /// `v` as recorded on the session tape.
    pub var: Var,
    /// `(1/n)·Σ v` averaged over the batch, when the mode adds it to the loss.
    pub regularizer: Option<(Var, f32)>,
}

impl RoutingVector {
    pub fn selected(&self) -> Vec<Vec<bool>> {
        let k = self.v.dims()[1];
        self.v.data().chunks(k).map(|r| r.iter().map(|&x| x >= 0.5).collect()).collect()
    }
}

/// Budget-normalised selection rates `w̃_i = min(β·n·σ(ṽ_i) / Σ_j σ(ṽ_j), 1)` for one sample.
pub fn stebs_probs(logits: &[f32], beta: f32) -> Vec<f32> {
    let s: Vec<f32> = logits.iter().map(|&x| sigmoid(x)).collect();
    budget_normalize_rows(&s, s.len(), beta)
}

/// Draws `v_i ~ Bernoulli(w̃_i)` for one sample. Returns `(v, w̃)`.
pub fn stebs_sample(logits: &[f32], beta: f32, rng: &mut impl Rng) -> (Vec<f32>, Vec<f32>) {
    let w = stebs_probs(logits, beta);
    let v = w.iter().map(|&p| bernoulli(p, rng)).collect();
    (v, w)
}

#[inline]
pub fn bernoulli(p: f32, rng: &mut impl Rng) -> f32 {
    if rng.gen::<f32>() < p {
        1.0
    } else {
        0.0
    }
}

/// Standard Gumbel(0, 1) draw.
pub fn gumbel_noise(rng: &mut impl Rng) -> f32 {
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    (-(-u.ln()).ln()) as f32
}

/// Two-class Gumbel-Softmax weight for a perturbed logit `x = ṽ + G`:
/// `exp(x/τ) / (exp(x/τ) + exp((2 − x)/τ))`, evaluated as a sigmoid of the
/// exponent difference so it cannot overflow.
pub fn gumbel_relax(x: f32, tau: f32) -> f32 {
    sigmoid((2.0 * x - 2.0) / tau)
}

/// Soft Gumbel routing weights for one sample.
pub fn gumbel_sample(logits: &[f32], tau: f32, rng: &mut impl Rng) -> Result<Vec<f32>> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    Ok(logits.iter().map(|&l| gumbel_relax(l + gumbel_noise(rng), tau)).collect())
}

/// Produces the routing vector for a batch and records it on the session tape.
///
/// `tau` is the current Gumbel temperature and is ignored by other modes.
#[allow(clippy::too_many_arguments)]
pub fn make_routing(
    mode: &RoutingMode,
    net: &RoutingNet,
    s: &mut Session,
    prev: Var,
    cur: Var,
    phase: Phase,
    tau: f32,
    rng: &mut impl Rng,
) -> Result<RoutingVector> {
    mode.validate()?;
    let n = s.tape.dims(prev)[0];
    let k = net.blocks;
    match *mode {
        RoutingMode::AlwaysOn => {
            let v = Tensor::ones(&[n, k]);
            let var = s.constant(v.clone());
            Ok(RoutingVector { logits: None, probs: v.clone(), v, var, regularizer: None })
        }
        RoutingMode::Random { p } => {
            let v = Tensor::from_fn(&[n, k], |_| bernoulli(p, rng));
            let var = s.constant(v.clone());
            Ok(RoutingVector { logits: None, probs: Tensor::full(&[n, k], p), v, var, regularizer: None })
        }
        RoutingMode::Stebs { beta, threshold } => {
            let logits = net.logits(s, prev, cur)?;
            let sig = s.tape.sigmoid(logits);
            let w = s.tape.budget_normalize(sig, beta)?;
            let probs = s.tape.value(w).clone();
            let v = if phase == Phase::Infer && threshold {
                probs.map(|p| if p >= 0.5 { 1.0 } else { 0.0 })
            } else {
                let mut draws = probs.clone();
                draws.data_mut().iter_mut().for_each(|p| *p = bernoulli(*p, rng));
                draws
            };
            let var = match phase {
                Phase::Train => s.tape.straight_through(w, v.clone())?,
                Phase::Infer => s.constant(v.clone()),
            };
            let logits = Some(s.tape.value(logits).clone());
            Ok(RoutingVector { logits, probs, v, var, regularizer: None })
        }
        RoutingMode::Gumbel { reg_weight, .. } => {
            let logits = net.logits(s, prev, cur)?;
            let lv = s.tape.value(logits).clone();
            match phase {
                Phase::Train => {
                    if !(tau > 0.0) {
                        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
                    }
                    let noise = Tensor::from_fn(&[n, k], |_| gumbel_noise(rng));
                    let g = s.constant(noise);
                    let x = s.tape.add(logits, g)?;
                    let z = s.tape.mul_scalar(x, 2.0 / tau);
                    let z = s.tape.add_scalar(z, -2.0 / tau);
                    let var = s.tape.sigmoid(z);
                    let v = s.tape.value(var).clone();
                    let reg = s.tape.mean(var);
                    Ok(RoutingVector { logits: Some(lv), probs: v.clone(), v, var, regularizer: Some((reg, reg_weight)) })
                }
                Phase::Infer => {
                    // noise-free relaxation thresholded at 0.5, i.e. ṽ ≥ 1
                    let probs = lv.map(|x| gumbel_relax(x, tau.max(f32::MIN_POSITIVE)));
                    let v = lv.map(|x| if x >= 1.0 { 1.0 } else { 0.0 });
                    let var = s.constant(v.clone());
                    Ok(RoutingVector { logits: Some(lv), probs, v, var, regularizer: None })
                }
            }
        }
    }
}
