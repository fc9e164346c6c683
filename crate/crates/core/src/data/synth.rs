use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClipMeta, ClipRecord};
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Rectangle,
    Disk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Background {
    Flat,
    Gradient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    pub kinds: Vec<ShapeKind>,
    /// Shape extent (rectangle side or disk diameter) in pixels.
    pub min_size: f32,
    pub max_size: f32,
    /// Speed range in pixels per frame.
    pub min_speed: f32,
    pub max_speed: f32,
    pub min_intensity: f32,
    pub max_intensity: f32,
    pub background: Background,
    pub frames: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            min_shapes: 2,
            max_shapes: 4,
            kinds: vec![ShapeKind::Rectangle, ShapeKind::Disk],
            min_size: 8.0,
            max_size: 20.0,
            min_speed: 0.0,
            max_speed: 6.0,
            min_intensity: 0.05,
            max_intensity: 0.95,
            background: Background::Gradient,
            frames: 7,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let side = self.height.min(self.width) as f32;
        let err = |m: String| Err(Error::Config(m));
        if self.height == 0 || self.width == 0 {
            return err("canvas must be non-empty".into());
        }
        if self.min_shapes == 0 || self.min_shapes > self.max_shapes {
            return err(format!("shape count range {}..={} is invalid", self.min_shapes, self.max_shapes));
        }
        if self.kinds.is_empty() {
            return err("no shape kinds".into());
        }
        if !(self.min_size > 0.0 && self.min_size <= self.max_size) {
            return err(format!("size range {}..={} is invalid", self.min_size, self.max_size));
        }
        if self.max_size > side {
            return err(format!("shapes up to {} px do not fit a {}x{} canvas", self.max_size, self.height, self.width));
        }
        if !(self.min_speed >= 0.0 && self.min_speed <= self.max_speed) {
            return err(format!("speed range {}..={} is invalid", self.min_speed, self.max_speed));
        }
        if self.max_speed > side / 4.0 {
            return err(format!("speed {} exceeds a quarter of the canvas", self.max_speed));
        }
        if !(0.0..=1.0).contains(&self.min_intensity) || !(self.min_intensity..=1.0).contains(&self.max_intensity) {
            return err("intensity range must lie in [0, 1]".into());
        }
        if self.frames < 3 {
            return err("clips need at least 3 frames".into());
        }
        Ok(())
    }
}

/// A shape translating at constant velocity. Positions are clamped so the shape never
/// leaves the canvas.
#[derive(Clone, Debug, PartialEq)]
pub struct Shape {
    pub kind: ShapeKind,
    /// Centre `(x, y)` at frame 0.
    pub center: (f32, f32),
    /// Half extent `(x, y)`; disks use `x` as the radius.
    pub half: (f32, f32),
    pub velocity: (f32, f32),
    pub color: [f32; 3],
}

impl Shape {
    pub fn speed(&self) -> f32 {
        self.velocity.0.hypot(self.velocity.1)
    }

    pub fn center_at(&self, t: usize, h: usize, w: usize) -> (f32, f32) {
        let clamp = |p: f32, half: f32, len: usize| p.clamp(half, (len as f32 - half).max(half));
        (
            clamp(self.center.0 + self.velocity.0 * t as f32, self.half.0, w),
            clamp(self.center.1 + self.velocity.1 * t as f32, self.half.1, h),
        )
    }

    /// Fraction of pixel `(x, y)` covered by the shape centred at `c`.
    fn coverage(&self, c: (f32, f32), x: usize, y: usize) -> f32 {
        match self.kind {
            ShapeKind::Rectangle => {
                let overlap = |p: usize, c: f32, half: f32| {
                    let lo = (c - half).max(p as f32);
                    let hi = (c + half).min(p as f32 + 1.0);
                    (hi - lo).max(0.0)
                };
                overlap(x, c.0, self.half.0) * overlap(y, c.1, self.half.1)
            }
            ShapeKind::Disk => {
                let d = (x as f32 + 0.5 - c.0).hypot(y as f32 + 0.5 - c.1);
                (self.half.0 - d + 0.5).clamp(0.0, 1.0)
            }
        }
    }
}

fn background(kind: Background, base: [f32; 3], h: usize, w: usize) -> Vec<f32> {
    let mut data = Vec::with_capacity(3 * h * w);
    for (ch, &b) in base.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                data.push(match kind {
                    Background::Flat => b,
                    Background::Gradient => {
                        let t = if ch % 2 == 0 { x as f32 / w as f32 } else { y as f32 / h as f32 };
                        (b + 0.2 * (t - 0.5)).clamp(0.0, 1.0)
                    }
                });
            }
        }
    }
    data
}

/// Renders frame `t` of `shapes` painted in order over the background.
pub fn render(shapes: &[Shape], bg: Background, bg_color: [f32; 3], h: usize, w: usize, t: usize) -> Frame {
    let mut data = background(bg, bg_color, h, w);
    let plane = h * w;
    for shape in shapes {
        let c = shape.center_at(t, h, w);
        let y0 = (c.1 - shape.half.1 - 1.0).floor().max(0.0) as usize;
        let y1 = ((c.1 + shape.half.1 + 1.0).ceil() as usize).min(h);
        let x0 = (c.0 - shape.half.0 - 1.0).floor().max(0.0) as usize;
        let x1 = ((c.0 + shape.half.0 + 1.0).ceil() as usize).min(w);
        for y in y0..y1 {
            for x in x0..x1 {
                let a = shape.coverage(c, x, y);
                if a > 0.0 {
                    for (ch, &col) in shape.color.iter().enumerate() {
                        let p = &mut data[ch * plane + y * w + x];
                        *p = *p * (1.0 - a) + col * a;
                    }
                }
            }
        }
    }
    Frame::new(Tensor::new(&[3, h, w], data).expect("frame size")).expect("finite frame")
}

/// Clip number `index` of the stream defined by `cfg`.
pub fn generate_clip(cfg: &SynthConfig, index: u64) -> Result<ClipRecord> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let (h, w) = (cfg.height, cfg.width);
    let count = rng.gen_range(cfg.min_shapes..=cfg.max_shapes);
    let color = |rng: &mut ChaCha8Rng| -> [f32; 3] {
        std::array::from_fn(|_| rng.gen_range(cfg.min_intensity..=cfg.max_intensity))
    };
    let bg_color = color(&mut rng);
    let shapes: Vec<Shape> = (0..count)
        .map(|_| {
            let kind = cfg.kinds[rng.gen_range(0..cfg.kinds.len())];
            let size_x = rng.gen_range(cfg.min_size..=cfg.max_size);
            let size_y = match kind {
                ShapeKind::Rectangle => rng.gen_range(cfg.min_size..=cfg.max_size),
                ShapeKind::Disk => size_x,
            };
            let half = (size_x / 2.0, size_y / 2.0);
            let center = (rng.gen_range(half.0..=w as f32 - half.0), rng.gen_range(half.1..=h as f32 - half.1));
            let speed = rng.gen_range(cfg.min_speed..=cfg.max_speed);
            let angle = rng.gen_range(0.0..std::f32::consts::TAU);
            let velocity = (speed * angle.cos(), speed * angle.sin());
            Shape { kind, center, half, velocity, color: color(&mut rng) }
        })
        .collect();
    let frames = (0..cfg.frames).map(|t| render(&shapes, cfg.background, bg_color, h, w, t)).collect();
    let max_speed = shapes.iter().map(Shape::speed).fold(0.0, f32::max);
    let meta = ClipMeta { name: format!("clip{index:05}"), max_speed: Some(max_speed), subset: None, interval: 1 };
    ClipRecord::new(frames, meta)
}

/// The first `count` clips of the stream defined by `cfg`.
pub fn gen_moving_shapes(cfg: &SynthConfig, count: usize) -> Result<Vec<ClipRecord>> {
    (0..count as u64).map(|i| generate_clip(cfg, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_clips() {
        let cfg = SynthConfig { seed: 11, ..SynthConfig::default() };
        assert_eq!(gen_moving_shapes(&cfg, 3).unwrap(), gen_moving_shapes(&cfg, 3).unwrap());
        let other = SynthConfig { seed: 12, ..cfg.clone() };
        assert_ne!(generate_clip(&cfg, 0).unwrap(), generate_clip(&other, 0).unwrap());
        assert_ne!(generate_clip(&cfg, 0).unwrap(), generate_clip(&cfg, 1).unwrap());
    }

    #[test]
    fn zero_velocity_gives_static_clip() {
        let cfg = SynthConfig { max_speed: 0.0, ..SynthConfig::default() };
        let clip = generate_clip(&cfg, 0).unwrap();
        assert!(clip.frames.iter().all(|f| f == &clip.frames[0]));
        assert_eq!(clip.meta.max_speed, Some(0.0));
    }

    #[test]
    fn speeds_respect_config_and_bins() {
        let cfg = SynthConfig { min_speed: 4.5, max_speed: 6.0, ..SynthConfig::default() };
        for clip in gen_moving_shapes(&cfg, 5).unwrap() {
            let s = clip.meta.max_speed.unwrap();
            assert!((4.5..=6.0 + 1e-4).contains(&s));
            assert_eq!(clip.meta.motion_bin(), Some(super::super::MotionBin::Fast));
        }
    }

    #[test]
    fn invalid_configs() {
        let base = SynthConfig::default();
        assert!(SynthConfig { max_size: 65.0, ..base.clone() }.validate().is_err());
        assert!(SynthConfig { max_speed: 17.0, ..base.clone() }.validate().is_err());
        assert!(SynthConfig { frames: 2, ..base.clone() }.validate().is_err());
        assert!(SynthConfig { min_shapes: 3, max_shapes: 2, ..base.clone() }.validate().is_err());
        assert!(SynthConfig { kinds: vec![], ..base }.validate().is_err());
    }

    #[test]
    fn values_in_unit_range() {
        let clip = generate_clip(&SynthConfig::default(), 4).unwrap();
        assert!(clip.frames.iter().all(|f| f.data().iter().all(|v| (0.0..=1.0).contains(v))));
    }
}
