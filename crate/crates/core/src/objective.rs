//! Laplacian-pyramid L1 reconstruction loss with geometric deep supervision.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::resample::{AxisTaps, Resample2d};
use crate::tensor::Tensor;
use crate::{Tape, Var};

pub const DEFAULT_LEVELS: usize = 5;
pub const DEFAULT_GAMMA: f32 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Supervision {
    /// Every block's output is supervised with weight `γ^(n−i)`.
    #[default]
    Full,
    /// Only the last block's output is supervised.
    Single,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub gamma: f32,
    pub levels: usize,
    pub supervision: Supervision,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { gamma: DEFAULT_GAMMA, levels: DEFAULT_LEVELS, supervision: Supervision::Full }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if self.levels == 0 {
            return Err(Error::Config("pyramid needs at least one level".into()));
        }
        Ok(())
    }
}

/// Loss weight of each of `n` block outputs.
pub fn supervision_weights(n: usize, gamma: f64, supervision: Supervision) -> Vec<f64> {
    match supervision {
        Supervision::Full => (1..=n).map(|i| gamma.powi((n - i) as i32)).collect(),
        Supervision::Single => (1..=n).map(|i| if i == n { 1.0 } else { 0.0 }).collect(),
    }
}

fn down_plan(h: usize, w: usize) -> Rc<Resample2d> {
    Rc::new(Resample2d { y: AxisTaps::blur_down(h), x: AxisTaps::blur_down(w) })
}

fn up_plan(from: (usize, usize), to: (usize, usize)) -> Rc<Resample2d> {
    Rc::new(Resample2d { y: AxisTaps::blur_up(from.0, to.0), x: AxisTaps::blur_up(from.1, to.1) })
}

fn check_levels(h: usize, w: usize, levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(Error::InvalidArgument("pyramid needs at least one level".into()));
    }
    let need = 1usize << (levels - 1).min(usize::BITS as usize - 1);
    if h < need || w < need {
        return Err(Error::shape("laplacian_pyramid", format!("{h}x{w} image is too small for {levels} levels")));
    }
    Ok(())
}

/// Band-pass levels on the tape, finest first; the last entry is the low-pass residual.
pub fn pyramid_levels(tape: &mut Tape, x: Var, levels: usize) -> Result<Vec<Var>> {
    let (_, _, h, w) = tape.value(x).nchw()?;
    check_levels(h, w, levels)?;
    let mut out = Vec::with_capacity(levels);
    let mut cur = x;
    let mut size = (h, w);
    for _ in 1..levels {
        let low = tape.resample(cur, down_plan(size.0, size.1))?;
        let low_size = (size.0.div_ceil(2), size.1.div_ceil(2));
        let up = tape.resample(low, up_plan(low_size, size))?;
        out.push(tape.sub(cur, up)?);
        cur = low;
        size = low_size;
    }
    out.push(cur);
    Ok(out)
}

/// `Σ_levels mean |pyr(a) − pyr(b)|`. The pyramid is linear, so it is built once on `a − b`.
pub fn lap_l1(tape: &mut Tape, a: Var, b: Var, levels: usize) -> Result<Var> {
    if tape.dims(a) != tape.dims(b) {
        return Err(Error::shape("lap_l1", format!("{:?} vs {:?}", tape.dims(a), tape.dims(b))));
    }
    let diff = tape.sub(a, b)?;
    let mut total: Option<Var> = None;
    for level in pyramid_levels(tape, diff, levels)? {
        let abs = tape.abs(level);
        let term = tape.mean(abs);
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    Ok(total.expect("at least one level"))
}

/// Weighted sum of `lap_l1` over block outputs, plus an optional `(term, weight)` regulariser.
pub fn total_loss(
    tape: &mut Tape,
    intermediates: &[Var],
    target: Var,
    cfg: &LossConfig,
    regularizer: Option<(Var, f32)>,
) -> Result<Var> {
    cfg.validate()?;
    if intermediates.is_empty() {
        return Err(Error::InvalidArgument("no block outputs to supervise".into()));
    }
    let weights = supervision_weights(intermediates.len(), cfg.gamma as f64, cfg.supervision);
    let mut total: Option<Var> = None;
    for (&img, &wt) in intermediates.iter().zip(&weights) {
        if wt == 0.0 {
            continue;
        }
        let d = lap_l1(tape, img, target, cfg.levels)?;
        let term = if wt == 1.0 { d } else { tape.mul_scalar(d, wt as f32) };
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    let mut total = total.expect("last block always has weight");
    if let Some((reg, weight)) = regularizer {
        let term = tape.mul_scalar(reg, weight);
        total = tape.add(total, term)?;
    }
    Ok(total)
}

/// A materialised Laplacian pyramid of one image batch.
#[derive(Clone, Debug)]
pub struct LapPyramid {
    pub levels: Vec<Tensor>,
}

impl LapPyramid {
    pub fn build(img: &Tensor, levels: usize) -> Result<Self> {
        let mut tape = Tape::new();
        let x = tape.constant(img.clone());
        let vars = pyramid_levels(&mut tape, x, levels)?;
        Ok(Self { levels: vars.into_iter().map(|v| tape.value(v).clone()).collect() })
    }

    /// Upsample-and-add from the coarsest level back to full resolution.
    pub fn reconstruct(&self) -> Result<Tensor> {
        let mut iter = self.levels.iter().rev();
        let mut acc = iter.next().expect("non-empty pyramid").clone();
        for band in iter {
            let (n, c, h, w) = band.nchw()?;
            let (_, _, lh, lw) = acc.nchw()?;
            let plan = up_plan((lh, lw), (h, w));
            let mut up = vec![0.0; n * c * h * w];
            plan.apply(acc.data(), n * c, &mut up);
            up.iter_mut().zip(band.data()).for_each(|(u, b)| *u += b);
            acc = Tensor::new(&[n, c, h, w], up)?;
        }
        Ok(acc)
    }
}
