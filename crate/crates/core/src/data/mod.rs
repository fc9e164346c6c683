//! Clips of frames: synthetic generation, disk IO and the crops/strides used for training.

mod io;
mod synth;

pub use io::{load_sequence, save_frames, Manifest, ManifestEntry};
pub use synth::{gen_moving_shapes, generate_clip, render, Background, Shape, ShapeKind, SynthConfig};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;

/// Speed bucket of a clip, from the fastest shape in it (pixels per frame).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionBin {
    Slow,
    Medium,
    Fast,
}

impl MotionBin {
    pub const SLOW_MAX: f32 = 2.0;
    pub const FAST_MIN: f32 = 4.0;

    pub fn from_speed(speed: f32) -> Self {
        if speed <= Self::SLOW_MAX {
            MotionBin::Slow
        } else if speed >= Self::FAST_MIN {
            MotionBin::Fast
        } else {
            MotionBin::Medium
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MotionBin::Slow => "slow",
            MotionBin::Medium => "medium",
            MotionBin::Fast => "fast",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipMeta {
    pub name: String,
    /// Fastest per-shape speed, when known.
    pub max_speed: Option<f32>,
    /// Free-form subset tag (for example from a manifest).
    pub subset: Option<String>,
    /// Stride between consecutive frames relative to the source clip.
    pub interval: usize,
}

impl ClipMeta {
    pub fn named(name: impl Into<String>) -> Self {
        Self { name: name.into(), max_speed: None, subset: None, interval: 1 }
    }

    pub fn motion_bin(&self) -> Option<MotionBin> {
        self.max_speed.map(MotionBin::from_speed)
    }
}

/// An ordered run of co-registered frames. Frames `0` and `1` are the model inputs and
/// frame `1 + j` is the ground truth at horizon `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipRecord {
    pub frames: Vec<Frame>,
    pub meta: ClipMeta,
}

impl ClipRecord {
    pub fn new(frames: Vec<Frame>, meta: ClipMeta) -> Result<Self> {
        if frames.len() < 3 {
            return Err(Error::Data(format!("clip {:?} has {} frames, need at least 3", meta.name, frames.len())));
        }
        let (h, w) = (frames[0].height(), frames[0].width());
        if let Some(i) = frames.iter().position(|f| (f.height(), f.width()) != (h, w)) {
            return Err(Error::Data(format!(
                "clip {:?}: frame {i} is {}x{}, expected {h}x{w}",
                meta.name,
                frames[i].height(),
                frames[i].width()
            )));
        }
        Ok(Self { frames, meta })
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn inputs(&self) -> (&Frame, &Frame) {
        (&self.frames[0], &self.frames[1])
    }

    pub fn target(&self) -> &Frame {
        &self.frames[2]
    }

    /// Ground truth `j` steps after the second input.
    pub fn horizon(&self, j: usize) -> Result<&Frame> {
        self.frames
            .get(1 + j)
            .filter(|_| j >= 1)
            .ok_or_else(|| Error::Data(format!("clip {:?} has no ground truth at t+{j}", self.meta.name)))
    }

    /// Consecutive triplet starting at frame `start`.
    pub fn triplet(&self, start: usize) -> Result<ClipRecord> {
        if start + 3 > self.len() {
            return Err(Error::Data(format!("no triplet at {start} in a {}-frame clip", self.len())));
        }
        ClipRecord::new(self.frames[start..start + 3].to_vec(), self.meta.clone())
    }

    /// The same crop window applied to every frame.
    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<ClipRecord> {
        let frames = self.frames.iter().map(|f| f.crop(y, x, h, w)).collect::<Result<Vec<_>>>()?;
        Ok(ClipRecord { frames, meta: self.meta.clone() })
    }
}

/// One uniformly placed `size × size` window shared by all frames.
pub fn sample_patch(clip: &ClipRecord, size: usize, rng: &mut impl Rng) -> Result<ClipRecord> {
    let (h, w) = (clip.height(), clip.width());
    if size == 0 || size > h.min(w) {
        return Err(Error::InvalidArgument(format!("patch {size} does not fit a {h}x{w} clip")));
    }
    let y = rng.gen_range(0..=h - size);
    let x = rng.gen_range(0..=w - size);
    clip.crop(y, x, size, size)
}

/// Every `interval`-th frame, starting from the first.
pub fn interval_subsample(clip: &ClipRecord, interval: usize) -> Result<ClipRecord> {
    if interval == 0 {
        return Err(Error::InvalidArgument("interval must be at least 1".into()));
    }
    let frames: Vec<Frame> = clip.frames.iter().step_by(interval).cloned().collect();
    if frames.len() < 3 {
        return Err(Error::Data(format!(
            "interval {interval} needs at least {} frames, clip {:?} has {}",
            2 * interval + 1,
            clip.meta.name,
            clip.len()
        )));
    }
    let meta = ClipMeta { interval, ..clip.meta.clone() };
    ClipRecord::new(frames, meta)
}
