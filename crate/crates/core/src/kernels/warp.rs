//! Bilinear backward sampling with clamp-to-edge reads.

/// Per-pixel bilinear stencil: clamped source coordinate split into corner indices and fractions.
#[derive(Clone, Copy, Debug)]
pub struct Stencil {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
    pub ax: f32,
    pub ay: f32,
    /// Whether the source coordinate is inside the image along x (derivative is live).
    pub live_x: bool,
    pub live_y: bool,
}

#[inline]
fn axis(pos: f32, len: usize) -> (usize, usize, f32, bool) {
    let max = (len - 1) as f32;
    let live = pos >= 0.0 && pos <= max;
    let p = pos.clamp(0.0, max);
    let i0 = (p.floor() as usize).min(len - 1);
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, p - i0 as f32, live)
}

impl Stencil {
    #[inline]
    pub fn at(px: usize, py: usize, fx: f32, fy: f32, w: usize, h: usize) -> Self {
        let (x0, x1, ax, live_x) = axis(px as f32 + fx, w);
        let (y0, y1, ay, live_y) = axis(py as f32 + fy, h);
        Self { x0, x1, y0, y1, ax, ay, live_x, live_y }
    }

    #[inline]
    pub fn sample(&self, plane: &[f32], w: usize) -> f32 {
        let top = plane[self.y0 * w + self.x0] * (1.0 - self.ax) + plane[self.y0 * w + self.x1] * self.ax;
        let bot = plane[self.y1 * w + self.x0] * (1.0 - self.ax) + plane[self.y1 * w + self.x1] * self.ax;
        top * (1.0 - self.ay) + bot * self.ay
    }

    /// ∂sample/∂(source x, source y), zero along clamped axes.
    #[inline]
    pub fn slope(&self, plane: &[f32], w: usize) -> (f32, f32) {
        let v00 = plane[self.y0 * w + self.x0];
        let v01 = plane[self.y0 * w + self.x1];
        let v10 = plane[self.y1 * w + self.x0];
        let v11 = plane[self.y1 * w + self.x1];
        let dx = if self.live_x && self.x1 != self.x0 {
            (v01 - v00) * (1.0 - self.ay) + (v11 - v10) * self.ay
        } else {
            0.0
        };
        let dy = if self.live_y && self.y1 != self.y0 {
            (v10 - v00) * (1.0 - self.ax) + (v11 - v01) * self.ax
        } else {
            0.0
        };
        (dx, dy)
    }

    #[inline]
    pub fn scatter(&self, plane: &mut [f32], w: usize, g: f32) {
        plane[self.y0 * w + self.x0] += g * (1.0 - self.ax) * (1.0 - self.ay);
        plane[self.y0 * w + self.x1] += g * self.ax * (1.0 - self.ay);
        plane[self.y1 * w + self.x0] += g * (1.0 - self.ax) * self.ay;
        plane[self.y1 * w + self.x1] += g * self.ax * self.ay;
    }
}

/// Warps `n × c × h × w` images by `n × 2 × h × w` flows (channel 0 = x, 1 = y).
pub fn warp_forward(img: &[f32], flow: &[f32], n: usize, c: usize, h: usize, w: usize, out: &mut [f32]) {
    let plane = h * w;
    for b in 0..n {
        let fl = &flow[b * 2 * plane..(b + 1) * 2 * plane];
        for py in 0..h {
            for px in 0..w {
                let p = py * w + px;
                let s = Stencil::at(px, py, fl[p], fl[plane + p], w, h);
                for ch in 0..c {
                    let off = (b * c + ch) * plane;
                    out[off + p] = s.sample(&img[off..off + plane], w);
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn warp_backward(
    img: &[f32],
    flow: &[f32],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    gout: &[f32],
    mut gimg: Option<&mut [f32]>,
    mut gflow: Option<&mut [f32]>,
) {
    let plane = h * w;
    for b in 0..n {
        let fl = &flow[b * 2 * plane..(b + 1) * 2 * plane];
        for py in 0..h {
            for px in 0..w {
                let p = py * w + px;
                let s = Stencil::at(px, py, fl[p], fl[plane + p], w, h);
                let (mut gx, mut gy) = (0.0, 0.0);
                for ch in 0..c {
                    let off = (b * c + ch) * plane;
                    let g = gout[off + p];
                    if let Some(gi) = gimg.as_deref_mut() {
                        s.scatter(&mut gi[off..off + plane], w, g);
                    }
                    if gflow.is_some() {
                        let (dx, dy) = s.slope(&img[off..off + plane], w);
                        gx += g * dx;
                        gy += g * dy;
                    }
                }
                if let Some(gf) = gflow.as_deref_mut() {
                    gf[b * 2 * plane + p] += gx;
                    gf[b * 2 * plane + plane + p] += gy;
                }
            }
        }
    }
}
