use super::gemm;

/// Geometry of a square-kernel 2-D convolution over one image plane stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// Output size is `floor((H + 2·pad − k) / stride) + 1`; `None` when the kernel does not fit.
    pub fn new(channels: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || k == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return None;
        }
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        Some(Self { channels, h, w, k, stride, pad, oh, ow })
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    pub fn col_cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Input index range `[lo, hi)` of output positions whose tap `t` lands inside `[0, len)`.
    #[inline]
    fn valid_range(&self, t: usize, len: usize, out_len: usize) -> (usize, usize) {
        // input coordinate = o*stride + t - pad must lie in [0, len)
        let s = self.stride as isize;
        let shift = t as isize - self.pad as isize;
        let lo = if shift >= 0 { 0 } else { ((-shift) + s - 1) / s };
        let hi = (len as isize - shift + s - 1).div_euclid(s);
        (lo.max(0) as usize, (hi.max(0) as usize).min(out_len))
    }
}

/// Unfolds `x` (channels × h × w) into `cols` ((channels·k·k) × (oh·ow)).
pub fn im2col(x: &[f32], g: &ConvGeom, cols: &mut [f32]) {
    let plane = g.oh * g.ow;
    debug_assert_eq!(cols.len(), g.col_rows() * plane);
    for c in 0..g.channels {
        let src = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            let (oy_lo, oy_hi) = g.valid_range(ky, g.h, g.oh);
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let (ox_lo, ox_hi) = g.valid_range(kx, g.w, g.ow);
                for oy in 0..g.oh {
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if oy < oy_lo || oy >= oy_hi || ox_lo >= ox_hi {
                        line.fill(0.0);
                        continue;
                    }
                    let iy = oy * g.stride + ky - g.pad;
                    let srow = &src[iy * g.w..(iy + 1) * g.w];
                    line[..ox_lo].fill(0.0);
                    line[ox_hi..].fill(0.0);
                    if g.stride == 1 {
                        let ix0 = ox_lo + kx - g.pad;
                        line[ox_lo..ox_hi].copy_from_slice(&srow[ix0..ix0 + (ox_hi - ox_lo)]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            line[ox] = srow[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `cols` back and accumulates into `x`.
pub fn col2im(cols: &[f32], g: &ConvGeom, x: &mut [f32]) {
    let plane = g.oh * g.ow;
    for c in 0..g.channels {
        let dst = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            let (oy_lo, oy_hi) = g.valid_range(ky, g.h, g.oh);
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                let (ox_lo, ox_hi) = g.valid_range(kx, g.w, g.ow);
                if ox_lo >= ox_hi {
                    continue;
                }
                for oy in oy_lo..oy_hi {
                    let iy = oy * g.stride + ky - g.pad;
                    let drow = &mut dst[iy * g.w..(iy + 1) * g.w];
                    let line = &src[oy * g.ow..(oy + 1) * g.ow];
                    for ox in ox_lo..ox_hi {
                        drow[ox * g.stride + kx - g.pad] += line[ox];
                    }
                }
            }
        }
    }
}

/// Forward convolution of a batch. `weight` is `cout × (cin·k·k)`, `out` is `n × cout × oh × ow`.
pub fn conv2d_forward(
    x: &[f32],
    n: usize,
    g: &ConvGeom,
    weight: &[f32],
    bias: Option<&[f32]>,
    cout: usize,
    out: &mut [f32],
) {
    let rows = g.col_rows();
    let plane = g.col_cols();
    let in_sz = g.channels * g.h * g.w;
    let out_sz = cout * plane;
    let mut cols = vec![0.0; rows * plane];
    for b in 0..n {
        im2col(&x[b * in_sz..(b + 1) * in_sz], g, &mut cols);
        let ob = &mut out[b * out_sz..(b + 1) * out_sz];
        fill_bias(ob, bias, cout, plane);
        gemm(cout, rows, plane, weight, (rows, 1), &cols, (plane, 1), 1.0, ob, (plane, 1));
    }
}

/// Gradients of [`conv2d_forward`]. Each output slot is accumulated when present.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    x: &[f32],
    n: usize,
    g: &ConvGeom,
    weight: &[f32],
    cout: usize,
    gout: &[f32],
    mut gx: Option<&mut [f32]>,
    mut gw: Option<&mut [f32]>,
    mut gb: Option<&mut [f32]>,
) {
    let rows = g.col_rows();
    let plane = g.col_cols();
    let in_sz = g.channels * g.h * g.w;
    let out_sz = cout * plane;
    let mut cols = vec![0.0; rows * plane];
    for b in 0..n {
        let go = &gout[b * out_sz..(b + 1) * out_sz];
        if let Some(gb) = gb.as_deref_mut() {
            accumulate_row_sums(go, cout, plane, gb);
        }
        if let Some(gw) = gw.as_deref_mut() {
            im2col(&x[b * in_sz..(b + 1) * in_sz], g, &mut cols);
            // gw[cout × rows] += go[cout × plane] · colsᵀ
            gemm(cout, plane, rows, go, (plane, 1), &cols, (1, plane), 1.0, gw, (rows, 1));
        }
        if let Some(gx) = gx.as_deref_mut() {
            // cols = Wᵀ · go
            gemm(rows, cout, plane, weight, (1, rows), go, (plane, 1), 0.0, &mut cols, (plane, 1));
            col2im(&cols, g, &mut gx[b * in_sz..(b + 1) * in_sz]);
        }
    }
}

/// Transposed convolution. `g` is the geometry of the *adjoint* convolution, which maps
/// the output (`g.channels × g.h × g.w`) down to the input (`cin × g.oh × g.ow`).
/// `weight` is `cin × (cout·k·k)` with `cout == g.channels`.
pub fn conv_transpose2d_forward(
    x: &[f32],
    n: usize,
    cin: usize,
    g: &ConvGeom,
    weight: &[f32],
    bias: Option<&[f32]>,
    out: &mut [f32],
) {
    let rows = g.col_rows();
    let plane = g.col_cols();
    let in_sz = cin * plane;
    let out_plane = g.h * g.w;
    let out_sz = g.channels * out_plane;
    let mut cols = vec![0.0; rows * plane];
    for b in 0..n {
        // cols[rows × plane] = Wᵀ · x_b
        gemm(rows, cin, plane, weight, (1, rows), &x[b * in_sz..(b + 1) * in_sz], (plane, 1), 0.0, &mut cols, (plane, 1));
        let ob = &mut out[b * out_sz..(b + 1) * out_sz];
        fill_bias(ob, bias, g.channels, out_plane);
        col2im(&cols, g, ob);
    }
}

#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d_backward(
    x: &[f32],
    n: usize,
    cin: usize,
    g: &ConvGeom,
    weight: &[f32],
    gout: &[f32],
    mut gx: Option<&mut [f32]>,
    mut gw: Option<&mut [f32]>,
    mut gb: Option<&mut [f32]>,
) {
    let rows = g.col_rows();
    let plane = g.col_cols();
    let in_sz = cin * plane;
    let out_plane = g.h * g.w;
    let out_sz = g.channels * out_plane;
    let mut cols = vec![0.0; rows * plane];
    for b in 0..n {
        let go = &gout[b * out_sz..(b + 1) * out_sz];
        if let Some(gb) = gb.as_deref_mut() {
            accumulate_row_sums(go, g.channels, out_plane, gb);
        }
        if gx.is_none() && gw.is_none() {
            continue;
        }
        im2col(go, g, &mut cols);
        if let Some(gx) = gx.as_deref_mut() {
            // gx_b[cin × plane] += W · cols
            gemm(cin, rows, plane, weight, (rows, 1), &cols, (plane, 1), 1.0, &mut gx[b * in_sz..(b + 1) * in_sz], (plane, 1));
        }
        if let Some(gw) = gw.as_deref_mut() {
            // gw[cin × rows] += x_b · colsᵀ
            gemm(cin, plane, rows, &x[b * in_sz..(b + 1) * in_sz], (plane, 1), &cols, (1, plane), 1.0, gw, (rows, 1));
        }
    }
}

fn fill_bias(out: &mut [f32], bias: Option<&[f32]>, channels: usize, plane: usize) {
    match bias {
        Some(bias) => {
            for c in 0..channels {
                out[c * plane..(c + 1) * plane].fill(bias[c]);
            }
        }
        None => out.fill(0.0),
    }
}

fn accumulate_row_sums(m: &[f32], rows: usize, cols: usize, acc: &mut [f32]) {
    for r in 0..rows {
        acc[r] += m[r * cols..(r + 1) * cols].iter().sum::<f32>();
    }
}
