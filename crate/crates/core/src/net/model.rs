use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mvfb::{BlockState, MvfbBlock, MvfbConfig};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::params::{ParamStore, Session};
use crate::routing::{make_routing, Phase, RoutingMode, RoutingNet};
use crate::tensor::Tensor;
use crate::warp::VOXEL_FLOW_CHANNELS;
use crate::Var;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Every block is evaluated and blended with its input state by `v_i`, so the
    /// routing weights receive gradients.
    Train,
    /// Block `i` runs only for samples with `v_i = 1`.
    Infer,
}

/// The routed chain of voxel-flow blocks plus the routing network.
#[derive(Clone, Debug)]
pub struct Dmvfn {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub blocks: Vec<MvfbBlock>,
    pub router: RoutingNet,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Prediction after every block (`Ĩ^1 … Ĩ^n`); skipped blocks repeat their input.
    pub frames: Vec<Var>,
    /// Raw voxel flow after every block.
    pub flows: Vec<Var>,
    /// Per-sample block mask (`v_i ≥ 0.5`).
    pub selected: Vec<Vec<bool>>,
    /// Emitted frame, clamped to `[0, 1]`; samples with no selected block fall back to
    /// the last input frame.
    pub prediction: Tensor,
}

impl Dmvfn {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let blocks = config
            .schedule
            .iter()
            .enumerate()
            .map(|(i, &scale)| {
                let cfg = MvfbConfig {
                    scale,
                    motion_width: config.width_for(scale),
                    spatial_width: config.spatial_width,
                    spatial_path: config.spatial_path,
                };
                MvfbBlock::new(&mut params, &format!("block{i}"), cfg, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let router = RoutingNet::new(&mut params, config.routing_width, blocks.len(), &mut rng)?;
        Ok(Self { config, params, blocks, router })
    }

    /// Number of blocks in the chain.
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn check_frame_size(&self, h: usize, w: usize) -> Result<()> {
        let m = self.config.size_multiple();
        if !h.is_multiple_of(m) || !w.is_multiple_of(m) || h == 0 || w == 0 {
            return Err(Error::shape("dmvfn", format!("frame {h}x{w} must be a positive multiple of {m}")));
        }
        Ok(())
    }

    fn initial_state(&self, s: &mut Session, n: usize, h: usize, w: usize) -> BlockState {
        BlockState {
            frame: s.constant(Tensor::zeros(&[n, 3, h, w])),
            flow: s.constant(Tensor::zeros(&[n, VOXEL_FLOW_CHANNELS, h, w])),
        }
    }

    /// Runs every block in order with no routing.
    pub fn forward_sequential(&self, s: &mut Session, prev: Var, cur: Var) -> Result<Vec<BlockState>> {
        let (n, _, h, w) = s.tape.value(prev).nchw()?;
        self.check_frame_size(h, w)?;
        let mut state = self.initial_state(s, n, h, w);
        let mut out = Vec::with_capacity(self.len());
        for block in &self.blocks {
            state = block.forward(s, prev, cur, state)?.state;
            out.push(state);
        }
        Ok(out)
    }

    /// Routed forward pass. `v` is an `n × blocks` matrix on the session tape.
    pub fn forward(&self, s: &mut Session, prev: Var, cur: Var, v: Var, mode: Mode) -> Result<ForwardOutput> {
        let (n, c, h, w) = s.tape.value(prev).nchw()?;
        if c != 3 || s.tape.dims(cur) != s.tape.dims(prev) {
            return Err(Error::shape("dmvfn", format!("frames {:?} and {:?}", s.tape.dims(prev), s.tape.dims(cur))));
        }
        self.check_frame_size(h, w)?;
        match *s.tape.dims(v) {
            [_, 0] => return Err(Error::InvalidArgument("empty routing vector".into())),
            [rows, k] if rows == n && k == self.len() => {}
            _ => {
                return Err(Error::shape(
                    "dmvfn",
                    format!("routing {:?} for batch {n} and {} blocks", s.tape.dims(v), self.len()),
                ))
            }
        }
        let vt = s.tape.value(v).clone();
        let k = self.len();
        let selected: Vec<Vec<bool>> = vt.data().chunks(k).map(|r| r.iter().map(|&x| x >= 0.5).collect()).collect();
        let (frames, flows) = match mode {
            Mode::Train => self.forward_blended(s, prev, cur, v, n, h, w)?,
            Mode::Infer => {
                if let Some(bad) = vt.data().iter().find(|x| **x != 0.0 && **x != 1.0) {
                    return Err(Error::InvalidArgument(format!("inference routing must be binary, found {bad}")));
                }
                self.forward_skipping(s, prev, cur, &selected, h, w)?
            }
        };

        let last = s.tape.value(*frames.last().expect("non-empty chain"));
        let fallback = s.tape.value(cur);
        let per = 3 * h * w;
        let mut pred = Vec::with_capacity(n * per);
        for (b, row) in vt.data().chunks(k).enumerate() {
            let src = if row.iter().all(|&x| x == 0.0) { fallback } else { last };
            pred.extend(src.data()[b * per..(b + 1) * per].iter().map(|x| x.clamp(0.0, 1.0)));
        }
        let prediction = Tensor::new(&[n, 3, h, w], pred)?;
        Ok(ForwardOutput { frames, flows, selected, prediction })
    }

    #[allow(clippy::too_many_arguments)]
    fn forward_blended(&self, s: &mut Session, prev: Var, cur: Var, v: Var, n: usize, h: usize, w: usize) -> Result<(Vec<Var>, Vec<Var>)> {
        let mut state = self.initial_state(s, n, h, w);
        let (mut frames, mut flows) = (Vec::new(), Vec::new());
        for (i, block) in self.blocks.iter().enumerate() {
            let out = block.forward(s, prev, cur, state)?.state;
            let on = s.tape.column(v, i)?;
            let off = s.tape.one_minus(on);
            let mix = |s: &mut Session, new: Var, old: Var| -> Result<Var> {
                let a = s.tape.scale_batch(new, on)?;
                let b = s.tape.scale_batch(old, off)?;
                s.tape.add(a, b)
            };
            state = BlockState { frame: mix(s, out.frame, state.frame)?, flow: mix(s, out.flow, state.flow)? };
            frames.push(state.frame);
            flows.push(state.flow);
        }
        Ok((frames, flows))
    }

    fn forward_skipping(&self, s: &mut Session, prev: Var, cur: Var, selected: &[Vec<bool>], h: usize, w: usize) -> Result<(Vec<Var>, Vec<Var>)> {
        let n = selected.len();
        let mut per_frames: Vec<Vec<Var>> = vec![Vec::with_capacity(n); self.len()];
        let mut per_flows: Vec<Vec<Var>> = vec![Vec::with_capacity(n); self.len()];
        for (b, row) in selected.iter().enumerate() {
            let (p, c) = if n == 1 { (prev, cur) } else { (s.tape.batch_slice(prev, b, 1)?, s.tape.batch_slice(cur, b, 1)?) };
            let mut state = self.initial_state(s, 1, h, w);
            for (i, block) in self.blocks.iter().enumerate() {
                if row[i] {
                    state = block.forward(s, p, c, state)?.state;
                }
                per_frames[i].push(state.frame);
                per_flows[i].push(state.flow);
            }
        }
        let gather = |s: &mut Session, parts: Vec<Vec<Var>>| -> Result<Vec<Var>> {
            parts.into_iter().map(|p| if p.len() == 1 { Ok(p[0]) } else { s.tape.batch_concat(&p) }).collect()
        };
        Ok((gather(s, per_frames)?, gather(s, per_flows)?))
    }
}

/// Rolls the model forward `k` steps. Step 1 predicts from `(prev, cur)`; step `j ≥ 2`
/// consumes the previous step's current frame and prediction. A fresh routing vector is
/// drawn at every step.
pub fn predict_sequence(
    model: &Dmvfn,
    prev: &Tensor,
    cur: &Tensor,
    k: usize,
    mode: &RoutingMode,
    rng: &mut impl Rng,
) -> Result<Vec<Tensor>> {
    if k < 1 {
        return Err(Error::InvalidArgument("prediction horizon must be at least 1".into()));
    }
    let (mut a, mut b) = (prev.clone(), cur.clone());
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let mut s = Session::new(&model.params, false);
        let (p, c) = (s.constant(a.clone()), s.constant(b.clone()));
        let routing = make_routing(mode, &model.router, &mut s, p, c, Phase::Infer, 1.0, rng)?;
        let fwd = model.forward(&mut s, p, c, routing.var, Mode::Infer)?;
        out.push(fwd.prediction.clone());
        a = b;
        b = fwd.prediction;
    }
    Ok(out)
}
