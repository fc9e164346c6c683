use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A single RGB image (`3 × h × w`) with values clamped to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame(Tensor);

impl Frame {
    pub const CHANNELS: usize = 3;

    /// Wraps a `3 × h × w` or `1 × 3 × h × w` tensor, clamping values into `[0, 1]`.
    pub fn new(t: Tensor) -> Result<Self> {
        let dims = match *t.dims() {
            [3, h, w] | [1, 3, h, w] => [3, h, w],
            _ => return Err(Error::shape("frame", format!("expected 3 × h × w, got {:?}", t.dims()))),
        };
        if !t.all_finite() {
            return Err(Error::Numeric("frame contains non-finite values".into()));
        }
        Ok(Self(t.clamp(0.0, 1.0).reshape(&dims)?))
    }

    pub fn filled(h: usize, w: usize, value: f32) -> Self {
        Self(Tensor::full(&[3, h, w], value.clamp(0.0, 1.0)))
    }

    pub fn height(&self) -> usize {
        self.0.dims()[1]
    }

    pub fn width(&self) -> usize {
        self.0.dims()[2]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn data(&self) -> &[f32] {
        self.0.data()
    }

    /// Crop `[y, y + h) × [x, x + w)`.
    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<Self> {
        if y + h > self.height() || x + w > self.width() || h == 0 || w == 0 {
            return Err(Error::InvalidArgument(format!(
                "crop {h}x{w} at ({y}, {x}) exceeds frame {}x{}",
                self.height(),
                self.width()
            )));
        }
        let src = self.0.data();
        let (fh, fw) = (self.height(), self.width());
        let mut data = Vec::with_capacity(3 * h * w);
        for c in 0..3 {
            for r in y..y + h {
                let off = (c * fh + r) * fw;
                data.extend_from_slice(&src[off + x..off + x + w]);
            }
        }
        Ok(Self(Tensor::new(&[3, h, w], data)?))
    }

    /// Stacks frames of equal size into an `n × 3 × h × w` batch.
    pub fn batch(frames: &[&Frame]) -> Result<Tensor> {
        let first = frames.first().ok_or_else(|| Error::shape("frame batch", "no frames"))?;
        let (h, w) = (first.height(), first.width());
        let mut data = Vec::with_capacity(frames.len() * 3 * h * w);
        for f in frames {
            if (f.height(), f.width()) != (h, w) {
                return Err(Error::shape(
                    "frame batch",
                    format!("{}x{} vs {h}x{w}", f.height(), f.width()),
                ));
            }
            data.extend_from_slice(f.data());
        }
        Tensor::new(&[frames.len(), 3, h, w], data)
    }

    /// Splits an `n × 3 × h × w` batch back into clamped frames.
    pub fn unbatch(t: &Tensor) -> Result<Vec<Frame>> {
        let (n, _, _, _) = t.nchw()?;
        (0..n).map(|b| Frame::new(t.batch_slice(b, 1)?)).collect()
    }
}
