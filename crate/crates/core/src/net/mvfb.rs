use rand::Rng;

use super::layers::{ConvPrelu, ConvTranspose};
use crate::error::{Error, Result};
use crate::params::{ParamStore, Session};
use crate::warp::{apply_voxel_flow, VoxelFlow, VOXEL_FLOW_CHANNELS};
use crate::Var;

/// Block input: previous frame, current frame, running prediction and running voxel flow.
pub const INPUT_CHANNELS: usize = 3 + 3 + 3 + VOXEL_FLOW_CHANNELS;

#[derive(Clone, Debug, PartialEq)]
pub struct MvfbConfig {
    pub scale: usize,
    pub motion_width: usize,
    pub spatial_width: usize,
    pub spatial_path: bool,
}

/// Running state of the chain: the current prediction and the raw voxel flow behind it.
#[derive(Clone, Copy, Debug)]
pub struct BlockState {
    pub frame: Var,
    /// `n × 5 × h × w`: two flows and the fusion logit.
    pub flow: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct BlockOutput {
    pub state: BlockState,
    /// Residual added to the incoming voxel flow.
    pub delta: Var,
    /// Fusion map after the sigmoid.
    pub fusion: Var,
}

/// One refinement stage with a downsampled motion path and a half-resolution spatial path.
///
/// Motion path: resize to `1/scale`, a stride-2 conv and two stride-1 convs, then resize
/// to half resolution. Spatial path: a stride-2 conv and a stride-1 conv at half
/// resolution. Both feed a stride-2 transposed conv that emits the 5-channel flow update.
#[derive(Clone, Debug)]
pub struct MvfbBlock {
    pub config: MvfbConfig,
    pub motion: Vec<ConvPrelu>,
    pub spatial: Vec<ConvPrelu>,
    pub merge: ConvTranspose,
}

impl MvfbBlock {
    pub fn new(store: &mut ParamStore, name: &str, config: MvfbConfig, rng: &mut impl Rng) -> Result<Self> {
        let cm = config.motion_width;
        let motion = vec![
            ConvPrelu::new(store, &format!("{name}.motion.0"), INPUT_CHANNELS, cm, 3, 2, 1, rng)?,
            ConvPrelu::new(store, &format!("{name}.motion.1"), cm, cm, 3, 1, 1, rng)?,
            ConvPrelu::new(store, &format!("{name}.motion.2"), cm, cm, 3, 1, 1, rng)?,
        ];
        let mut merged = cm;
        let spatial = if config.spatial_path {
            let cs = config.spatial_width;
            merged += cs;
            vec![
                ConvPrelu::new(store, &format!("{name}.spatial.0"), INPUT_CHANNELS, cs, 3, 2, 1, rng)?,
                ConvPrelu::new(store, &format!("{name}.spatial.1"), cs, cs, 3, 1, 1, rng)?,
            ]
        } else {
            Vec::new()
        };
        let merge = ConvTranspose::zeroed(store, &format!("{name}.merge"), merged, VOXEL_FLOW_CHANNELS, 4, 2, 1)?;
        Ok(Self { config, motion, spatial, merge })
    }

    pub fn forward(&self, s: &mut Session, prev: Var, cur: Var, state: BlockState) -> Result<BlockOutput> {
        let (_, _, h, w) = s.tape.value(prev).nchw()?;
        let scale = self.config.scale;
        if h % (2 * scale) != 0 || w % (2 * scale) != 0 {
            return Err(Error::shape(
                "mvfb",
                format!("frame {h}x{w} is not divisible by {} (twice the block scale)", 2 * scale),
            ));
        }
        for v in [cur, state.frame] {
            if s.tape.dims(v) != s.tape.dims(prev) {
                return Err(Error::shape("mvfb", format!("{:?} vs {:?}", s.tape.dims(v), s.tape.dims(prev))));
            }
        }
        let x = s.tape.concat_channels(&[prev, cur, state.frame, state.flow])?;

        let mut m = if scale > 1 { s.tape.bilinear_resize(x, h / scale, w / scale)? } else { x };
        for layer in &self.motion {
            m = layer.forward(s, m)?;
        }
        if scale > 1 {
            m = s.tape.bilinear_resize(m, h / 2, w / 2)?;
        }

        let merged = if self.spatial.is_empty() {
            m
        } else {
            let mut p = x;
            for layer in &self.spatial {
                p = layer.forward(s, p)?;
            }
            s.tape.concat_channels(&[m, p])?
        };

        let delta = self.merge.forward(s, merged)?;
        let flow = s.tape.add(state.flow, delta)?;
        let vf = VoxelFlow::from_raw(&mut s.tape, flow)?;
        let frame = apply_voxel_flow(&mut s.tape, prev, cur, &vf)?;
        Ok(BlockOutput { state: BlockState { frame, flow }, delta, fusion: vf.fusion })
    }
}
