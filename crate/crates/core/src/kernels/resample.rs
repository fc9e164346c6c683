//! Separable linear resampling: every output sample is a fixed weighted sum of
//! input samples along each axis. Bilinear resizing and the Laplacian-pyramid
//! blur/decimate and upsample stages are all instances.

/// Sparse 1-D resampling matrix in compressed-row form.
#[derive(Clone, Debug, PartialEq)]
pub struct AxisTaps {
    pub in_len: usize,
    pub out_len: usize,
    offsets: Vec<usize>,
    index: Vec<usize>,
    weight: Vec<f32>,
}

/// 5-tap binomial blur kernel.
pub const BINOMIAL5: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

impl AxisTaps {
    fn from_rows(in_len: usize, rows: impl IntoIterator<Item = Vec<(usize, f32)>>) -> Self {
        let mut offsets = vec![0];
        let mut index = Vec::new();
        let mut weight = Vec::new();
        for row in rows {
            for (i, w) in row {
                index.push(i);
                weight.push(w);
            }
            offsets.push(index.len());
        }
        Self { in_len, out_len: offsets.len() - 1, offsets, index, weight }
    }

    /// Bilinear interpolation with half-pixel centres and edge-clamped reads.
    pub fn bilinear(in_len: usize, out_len: usize) -> Self {
        let scale = in_len as f64 / out_len as f64;
        let rows = (0..out_len).map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            let t = (src - i0 as f64) as f32;
            if i1 == i0 || t == 0.0 {
                vec![(i0, 1.0)]
            } else {
                vec![(i0, 1.0 - t), (i1, t)]
            }
        });
        Self::from_rows(in_len, rows)
    }

    /// Binomial blur followed by factor-2 decimation; output length `ceil(in/2)`.
    /// Reads outside the signal are clamped to the edge.
    pub fn blur_down(in_len: usize) -> Self {
        let out_len = in_len.div_ceil(2);
        let last = in_len as isize - 1;
        let rows = (0..out_len).map(|o| {
            let mut row: Vec<(usize, f32)> = Vec::with_capacity(5);
            for (t, &w) in BINOMIAL5.iter().enumerate() {
                let i = (2 * o as isize + t as isize - 2).clamp(0, last) as usize;
                match row.iter_mut().find(|(j, _)| *j == i) {
                    Some(slot) => slot.1 += w,
                    None => row.push((i, w)),
                }
            }
            row
        });
        Self::from_rows(in_len, rows)
    }

    /// Zero-insertion upsampling by two followed by the binomial blur, to `out_len`
    /// samples. Weights per output are renormalised to sum to one so constants are preserved.
    pub fn blur_up(in_len: usize, out_len: usize) -> Self {
        let rows = (0..out_len).map(|o| {
            let mut row = Vec::with_capacity(3);
            let mut total = 0.0;
            for q in 0..in_len {
                let d = o as isize - 2 * q as isize;
                if d.abs() <= 2 {
                    let w = BINOMIAL5[(d + 2) as usize];
                    row.push((q, w));
                    total += w;
                }
            }
            if row.is_empty() {
                row.push((in_len - 1, 1.0));
                total = 1.0;
            }
            row.iter_mut().for_each(|(_, w)| *w /= total);
            row
        });
        Self::from_rows(in_len, rows)
    }

    #[inline]
    fn row(&self, o: usize) -> impl Iterator<Item = (usize, f32)> + '_ {
        let r = self.offsets[o]..self.offsets[o + 1];
        self.index[r.clone()].iter().copied().zip(self.weight[r].iter().copied())
    }
}

/// A pair of axis resamplers applied to every `h × w` plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Resample2d {
    pub y: AxisTaps,
    pub x: AxisTaps,
}

impl Resample2d {
    pub fn in_dims(&self) -> (usize, usize) {
        (self.y.in_len, self.x.in_len)
    }

    pub fn out_dims(&self) -> (usize, usize) {
        (self.y.out_len, self.x.out_len)
    }

    /// Resamples `planes` stacked planes of `input` into `out`.
    pub fn apply(&self, input: &[f32], planes: usize, out: &mut [f32]) {
        let (h, w) = self.in_dims();
        let (oh, ow) = self.out_dims();
        let mut tmp = vec![0.0f32; h * ow];
        for p in 0..planes {
            let src = &input[p * h * w..(p + 1) * h * w];
            for r in 0..h {
                let line = &src[r * w..(r + 1) * w];
                for ox in 0..ow {
                    tmp[r * ow + ox] = self.x.row(ox).map(|(i, wt)| line[i] * wt).sum();
                }
            }
            let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
            dst.fill(0.0);
            for oy in 0..oh {
                let drow = &mut dst[oy * ow..(oy + 1) * ow];
                for (i, wt) in self.y.row(oy) {
                    let srow = &tmp[i * ow..(i + 1) * ow];
                    drow.iter_mut().zip(srow).for_each(|(d, s)| *d += wt * s);
                }
            }
        }
    }

    /// Adjoint of [`apply`](Self::apply); accumulates into `gin`.
    pub fn apply_adjoint(&self, gout: &[f32], planes: usize, gin: &mut [f32]) {
        let (h, w) = self.in_dims();
        let (oh, ow) = self.out_dims();
        let mut tmp = vec![0.0f32; h * ow];
        for p in 0..planes {
            let src = &gout[p * oh * ow..(p + 1) * oh * ow];
            tmp.fill(0.0);
            for oy in 0..oh {
                let srow = &src[oy * ow..(oy + 1) * ow];
                for (i, wt) in self.y.row(oy) {
                    let trow = &mut tmp[i * ow..(i + 1) * ow];
                    trow.iter_mut().zip(srow).for_each(|(t, s)| *t += wt * s);
                }
            }
            let dst = &mut gin[p * h * w..(p + 1) * h * w];
            for r in 0..h {
                let line = &mut dst[r * w..(r + 1) * w];
                let trow = &tmp[r * ow..(r + 1) * ow];
                for (ox, &g) in trow.iter().enumerate() {
                    for (i, wt) in self.x.row(ox) {
                        line[i] += wt * g;
                    }
                }
            }
        }
    }
}
