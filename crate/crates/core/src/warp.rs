//! Backward warping and voxel-flow fusion.
//!
//! A voxel flow bundles two backward flows (target → previous frame and
//! target → current frame, in pixels, channel 0 = x, channel 1 = y) with a fusion
//! map `m ∈ [0, 1]`. The rendered frame is
//! `warp(prev, f_prev)·m + warp(cur, f_cur)·(1 − m)`.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Channels of a raw voxel-flow tensor: two 2-channel flows and one fusion logit.
pub const VOXEL_FLOW_CHANNELS: usize = 5;

/// Handles to the parts of a voxel flow on a tape.
#[derive(Clone, Copy, Debug)]
pub struct VoxelFlow {
    pub flow_prev: Var,
    pub flow_cur: Var,
    /// Fusion map `m`, already squashed into `[0, 1]`.
    pub fusion: Var,
}

impl VoxelFlow {
    /// Splits a raw `n × 5 × h × w` voxel-flow tensor. The fifth channel is a logit
    /// and is passed through a sigmoid to form `m`.
    pub fn from_raw(tape: &mut Tape, raw: Var) -> Result<Self> {
        let c = tape.value(raw).nchw()?.1;
        if c != VOXEL_FLOW_CHANNELS {
            return Err(Error::shape("voxel flow", format!("expected 5 channels, got {:?}", tape.dims(raw))));
        }
        let flow_prev = tape.narrow_channels(raw, 0, 2)?;
        let flow_cur = tape.narrow_channels(raw, 2, 2)?;
        let logit = tape.narrow_channels(raw, 4, 1)?;
        let fusion = tape.sigmoid(logit);
        Ok(Self { flow_prev, flow_cur, fusion })
    }
}

/// Samples `image` at `p + flow(p)` with bilinear interpolation and clamped reads.
pub fn backward_warp(tape: &mut Tape, image: Var, flow: Var) -> Result<Var> {
    tape.warp(image, flow)
}

/// Renders the predicted frame from two inputs and a voxel flow. The result is not
/// clamped so the training loss keeps its gradients; clamp when emitting frames.
pub fn apply_voxel_flow(tape: &mut Tape, prev: Var, cur: Var, vf: &VoxelFlow) -> Result<Var> {
    if tape.dims(prev) != tape.dims(cur) {
        return Err(Error::shape("apply_voxel_flow", format!("{:?} vs {:?}", tape.dims(prev), tape.dims(cur))));
    }
    if let Some(bad) = tape.value(vf.fusion).data().iter().find(|m| !(0.0..=1.0).contains(*m)) {
        return Err(Error::InvalidArgument(format!("fusion map value {bad} outside [0, 1]")));
    }
    let from_prev = tape.warp(prev, vf.flow_prev)?;
    let from_cur = tape.warp(cur, vf.flow_cur)?;
    tape.blend(from_prev, from_cur, vf.fusion)
}

/// Gradient-free warp of a plain tensor.
pub fn warp_tensor(image: &Tensor, flow: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let i = tape.constant(image.clone());
    let f = tape.constant(flow.clone());
    let out = tape.warp(i, f)?;
    Ok(tape.value(out).clone())
}
