//! Naive f64 implementations written directly from each operation's definition.
//!
//! Functions that branch on the data (activation signs, sampling cells, clamps) push
//! a code describing the branch taken onto `sig`, so finite-difference probes that
//! straddle a kink can be recognised and skipped.

use std::collections::HashMap;

use dmvfn_core::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Arr {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

pub type Sig = Vec<i64>;

impl Arr {
    pub fn zeros(dims: &[usize]) -> Self {
        Self { dims: dims.to_vec(), data: vec![0.0; dims.iter().product()] }
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        Self { dims: t.dims().to_vec(), data: t.data().iter().map(|&x| x as f64).collect() }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&self.dims, self.data.iter().map(|&x| x as f32).collect()).unwrap()
    }

    pub fn nchw(&self) -> (usize, usize, usize, usize) {
        (self.dims[0], self.dims[1], self.dims[2], self.dims[3])
    }

    pub fn at4(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        let (_, cc, h, w) = self.nchw();
        self.data[((n * cc + c) * h + y) * w + x]
    }

    pub fn at4_mut(&mut self, n: usize, c: usize, y: usize, x: usize) -> &mut f64 {
        let (_, cc, h, w) = self.nchw();
        &mut self.data[((n * cc + c) * h + y) * w + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Arr {
        Arr { dims: self.dims.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip(&self, o: &Arr, f: impl Fn(f64, f64) -> f64) -> Arr {
        assert_eq!(self.dims, o.dims);
        Arr { dims: self.dims.clone(), data: self.data.iter().zip(&o.data).map(|(&a, &b)| f(a, b)).collect() }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

pub fn conv2d(x: &Arr, w: &Arr, b: Option<&Arr>, stride: usize, pad: usize) -> Arr {
    let (n, c, h, wd) = x.nchw();
    let (o, ci, k, _) = w.nchw();
    assert_eq!(c, ci);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = Arr::zeros(&[n, o, oh, ow]);
    for b_ in 0..n {
        for oc in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b.data[oc]);
                    for ic in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xx * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += x.at4(b_, ic, iy as usize, ix as usize) * w.at4(oc, ic, ky, kx);
                                }
                            }
                        }
                    }
                    *out.at4_mut(b_, oc, y, xx) = acc;
                }
            }
        }
    }
    out
}

/// Weight layout `c_in × c_out × k × k`; every input pixel scatters a scaled kernel.
pub fn conv_transpose2d(x: &Arr, w: &Arr, b: Option<&Arr>, stride: usize, pad: usize) -> Arr {
    let (n, ci, h, wd) = x.nchw();
    let (_, co, k, _) = w.nchw();
    let oh = (h - 1) * stride + k - 2 * pad;
    let ow = (wd - 1) * stride + k - 2 * pad;
    let mut out = Arr::zeros(&[n, co, oh, ow]);
    for b_ in 0..n {
        for oc in 0..co {
            for y in 0..oh {
                for xx in 0..ow {
                    *out.at4_mut(b_, oc, y, xx) = b.map_or(0.0, |b| b.data[oc]);
                }
            }
        }
        for ic in 0..ci {
            for iy in 0..h {
                for ix in 0..wd {
                    let v = x.at4(b_, ic, iy, ix);
                    for oc in 0..co {
                        for ky in 0..k {
                            for kx in 0..k {
                                let y = (iy * stride + ky) as isize - pad as isize;
                                let xx = (ix * stride + kx) as isize - pad as isize;
                                if y >= 0 && xx >= 0 && (y as usize) < oh && (xx as usize) < ow {
                                    *out.at4_mut(b_, oc, y as usize, xx as usize) += v * w.at4(ic, oc, ky, kx);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Applies `f(line) -> line` along the x axis, then the y axis, of every plane.
fn separable(x: &Arr, oh: usize, ow: usize, fx: impl Fn(&[f64]) -> Vec<f64>, fy: impl Fn(&[f64]) -> Vec<f64>) -> Arr {
    let (n, c, h, w) = x.nchw();
    let mut out = Arr::zeros(&[n, c, oh, ow]);
    for b in 0..n {
        for ch in 0..c {
            let rows: Vec<Vec<f64>> = (0..h).map(|y| fx(&(0..w).map(|xx| x.at4(b, ch, y, xx)).collect::<Vec<_>>())).collect();
            for xx in 0..ow {
                let col: Vec<f64> = (0..h).map(|y| rows[y][xx]).collect();
                for (y, v) in fy(&col).into_iter().enumerate() {
                    *out.at4_mut(b, ch, y, xx) = v;
                }
            }
        }
    }
    out
}

/// Half-pixel-centred linear interpolation with edge clamping.
pub fn lerp_line(src: &[f64], out_len: usize) -> Vec<f64> {
    let n = src.len();
    (0..out_len)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * n as f64 / out_len as f64 - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            let t = pos - i0 as f64;
            src[i0] * (1.0 - t) + src[i1] * t
        })
        .collect()
}

pub fn resize(x: &Arr, oh: usize, ow: usize) -> Arr {
    separable(x, oh, ow, |l| lerp_line(l, ow), |l| lerp_line(l, oh))
}

const BINOMIAL: [f64; 5] = [1.0, 4.0, 6.0, 4.0, 1.0];

/// Blur with (1,4,6,4,1)/16 and clamped reads, keeping even samples.
pub fn blur_down_line(src: &[f64]) -> Vec<f64> {
    let n = src.len() as isize;
    (0..src.len().div_ceil(2))
        .map(|o| {
            (0..5).map(|t| BINOMIAL[t] / 16.0 * src[(2 * o as isize + t as isize - 2).clamp(0, n - 1) as usize]).sum()
        })
        .collect()
}

/// Zero-insertion upsampling then the binomial blur, renormalised by the taps that hit
/// a sample.
pub fn blur_up_line(src: &[f64], out_len: usize) -> Vec<f64> {
    (0..out_len)
        .map(|o| {
            let (mut acc, mut wsum) = (0.0, 0.0);
            for (q, &v) in src.iter().enumerate() {
                let d = o as isize - 2 * q as isize;
                if d.abs() <= 2 {
                    let wt = BINOMIAL[(d + 2) as usize];
                    acc += wt * v;
                    wsum += wt;
                }
            }
            if wsum == 0.0 {
                src[src.len() - 1]
            } else {
                acc / wsum
            }
        })
        .collect()
}

pub fn blur_down(x: &Arr) -> Arr {
    let (_, _, h, w) = x.nchw();
    separable(x, h.div_ceil(2), w.div_ceil(2), blur_down_line, blur_down_line)
}

pub fn blur_up(x: &Arr, oh: usize, ow: usize) -> Arr {
    separable(x, oh, ow, |l| blur_up_line(l, ow), |l| blur_up_line(l, oh))
}

pub fn pyramid(x: &Arr, levels: usize) -> Vec<Arr> {
    let mut out = Vec::new();
    let mut cur = x.clone();
    for _ in 1..levels {
        let low = blur_down(&cur);
        let (_, _, h, w) = cur.nchw();
        let up = blur_up(&low, h, w);
        out.push(cur.zip(&up, |a, b| a - b));
        cur = low;
    }
    out.push(cur);
    out
}

pub fn abs(x: &Arr, sig: &mut Sig) -> Arr {
    sig.extend(x.data.iter().map(|&v| (v >= 0.0) as i64));
    x.map(f64::abs)
}

pub fn lap_l1(a: &Arr, b: &Arr, levels: usize, sig: &mut Sig) -> f64 {
    let d = a.zip(b, |x, y| x - y);
    pyramid(&d, levels).iter().map(|l| abs(l, sig).mean()).sum()
}

pub fn sigmoid(x: &Arr) -> Arr {
    x.map(|v| 1.0 / (1.0 + (-v).exp()))
}

pub fn prelu(x: &Arr, slope: &Arr, sig: &mut Sig) -> Arr {
    let (n, c, h, w) = x.nchw();
    let mut out = x.clone();
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let v = x.at4(b, ch, y, xx);
                    sig.push((v >= 0.0) as i64);
                    *out.at4_mut(b, ch, y, xx) = if v >= 0.0 { v } else { slope.data[ch] * v };
                }
            }
        }
    }
    out
}

pub fn concat(parts: &[&Arr]) -> Arr {
    let (n, _, h, w) = parts[0].nchw();
    let c: usize = parts.iter().map(|p| p.dims[1]).sum();
    let mut out = Arr::zeros(&[n, c, h, w]);
    for b in 0..n {
        let mut off = 0;
        for p in parts {
            for ch in 0..p.dims[1] {
                for y in 0..h {
                    for xx in 0..w {
                        *out.at4_mut(b, off + ch, y, xx) = p.at4(b, ch, y, xx);
                    }
                }
            }
            off += p.dims[1];
        }
    }
    out
}

pub fn narrow(x: &Arr, start: usize, len: usize) -> Arr {
    let (n, _, h, w) = x.nchw();
    let mut out = Arr::zeros(&[n, len, h, w]);
    for b in 0..n {
        for ch in 0..len {
            for y in 0..h {
                for xx in 0..w {
                    *out.at4_mut(b, ch, y, xx) = x.at4(b, start + ch, y, xx);
                }
            }
        }
    }
    out
}

/// `out(y, x) = img(y + fy, x + fx)` with the sampling point clamped into the image.
pub fn warp(img: &Arr, flow: &Arr, sig: &mut Sig) -> Arr {
    let (n, c, h, w) = img.nchw();
    let mut out = Arr::zeros(&[n, c, h, w]);
    for b in 0..n {
        for y in 0..h {
            for xx in 0..w {
                let sx_raw = xx as f64 + flow.at4(b, 0, y, xx);
                let sy_raw = y as f64 + flow.at4(b, 1, y, xx);
                let sx = sx_raw.clamp(0.0, (w - 1) as f64);
                let sy = sy_raw.clamp(0.0, (h - 1) as f64);
                let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
                sig.extend([x0 as i64, y0 as i64, (sx != sx_raw) as i64, (sy != sy_raw) as i64]);
                let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
                let (tx, ty) = (sx - x0 as f64, sy - y0 as f64);
                for ch in 0..c {
                    let top = img.at4(b, ch, y0, x0) * (1.0 - tx) + img.at4(b, ch, y0, x1) * tx;
                    let bot = img.at4(b, ch, y1, x0) * (1.0 - tx) + img.at4(b, ch, y1, x1) * tx;
                    *out.at4_mut(b, ch, y, xx) = top * (1.0 - ty) + bot * ty;
                }
            }
        }
    }
    out
}

pub fn blend(a: &Arr, b: &Arr, m: &Arr) -> Arr {
    let (n, c, h, w) = a.nchw();
    let mut out = Arr::zeros(&[n, c, h, w]);
    for bb in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let mm = m.at4(bb, 0, y, xx);
                    *out.at4_mut(bb, ch, y, xx) = a.at4(bb, ch, y, xx) * mm + b.at4(bb, ch, y, xx) * (1.0 - mm);
                }
            }
        }
    }
    out
}

pub fn global_avg_pool(x: &Arr) -> Arr {
    let (n, c, h, w) = x.nchw();
    let mut out = Arr::zeros(&[n, c]);
    for b in 0..n {
        for ch in 0..c {
            let mut s = 0.0;
            for y in 0..h {
                for xx in 0..w {
                    s += x.at4(b, ch, y, xx);
                }
            }
            out.data[b * c + ch] = s / (h * w) as f64;
        }
    }
    out
}

/// `x: n × in`, `w: out × in`.
pub fn linear(x: &Arr, w: &Arr, b: Option<&Arr>) -> Arr {
    let (n, fin) = (x.dims[0], x.dims[1]);
    let fout = w.dims[0];
    let mut out = Arr::zeros(&[n, fout]);
    for r in 0..n {
        for o in 0..fout {
            let mut acc = b.map_or(0.0, |b| b.data[o]);
            for i in 0..fin {
                acc += x.data[r * fin + i] * w.data[o * fin + i];
            }
            out.data[r * fout + o] = acc;
        }
    }
    out
}

/// Row-wise `min(β·k·s_i / Σ s, 1)`.
pub fn budget_normalize(s: &Arr, beta: f64, sig: &mut Sig) -> Arr {
    let k = s.dims[1];
    let mut out = s.clone();
    for (row, orow) in s.data.chunks(k).zip(out.data.chunks_mut(k)) {
        let total: f64 = row.iter().sum();
        for (o, &v) in orow.iter_mut().zip(row) {
            let r = beta * k as f64 * v / total;
            sig.push((r >= 1.0) as i64);
            *o = r.min(1.0);
        }
    }
    out
}

/// Parameter values by name.
pub type Params = HashMap<String, Arr>;

pub fn params_of(store: &dmvfn_core::params::ParamStore) -> Params {
    store.iter().map(|p| (p.name.clone(), Arr::from_tensor(&p.value))).collect()
}

fn conv_prelu(p: &Params, name: &str, x: &Arr, stride: usize, sig: &mut Sig) -> Arr {
    let y = conv2d(x, &p[&format!("{name}.weight")], Some(&p[&format!("{name}.bias")]), stride, 1);
    prelu(&y, &p[&format!("{name}.prelu")], sig)
}

/// One refinement block: returns the new prediction and raw voxel flow.
#[allow(clippy::too_many_arguments)]
pub fn mvfb(p: &Params, name: &str, scale: usize, spatial: bool, prev: &Arr, cur: &Arr, frame: &Arr, flow: &Arr, sig: &mut Sig) -> (Arr, Arr) {
    let (_, _, h, w) = prev.nchw();
    let x = concat(&[prev, cur, frame, flow]);
    let mut m = if scale > 1 { resize(&x, h / scale, w / scale) } else { x.clone() };
    m = conv_prelu(p, &format!("{name}.motion.0"), &m, 2, sig);
    m = conv_prelu(p, &format!("{name}.motion.1"), &m, 1, sig);
    m = conv_prelu(p, &format!("{name}.motion.2"), &m, 1, sig);
    if scale > 1 {
        m = resize(&m, h / 2, w / 2);
    }
    let merged = if spatial {
        let s0 = conv_prelu(p, &format!("{name}.spatial.0"), &x, 2, sig);
        let s1 = conv_prelu(p, &format!("{name}.spatial.1"), &s0, 1, sig);
        concat(&[&m, &s1])
    } else {
        m
    };
    let delta = conv_transpose2d(&merged, &p[&format!("{name}.merge.weight")], Some(&p[&format!("{name}.merge.bias")]), 2, 1);
    let new_flow = flow.zip(&delta, |a, b| a + b);
    let fusion = sigmoid(&narrow(&new_flow, 4, 1));
    let a = warp(prev, &narrow(&new_flow, 0, 2), sig);
    let b = warp(cur, &narrow(&new_flow, 2, 2), sig);
    (blend(&a, &b, &fusion), new_flow)
}

/// Routing logits for a frame pair.
pub fn routing_logits(p: &Params, prev: &Arr, cur: &Arr, sig: &mut Sig) -> Arr {
    let (_, _, h, w) = prev.nchw();
    let x = resize(&concat(&[prev, cur]), (h / 4).max(1), (w / 4).max(1));
    let x = conv_prelu(p, "routing.conv.0", &x, 2, sig);
    let x = conv_prelu(p, "routing.conv.1", &x, 2, sig);
    linear(&global_avg_pool(&x), &p["routing.head.weight"], Some(&p["routing.head.bias"]))
}

/// Single-scale SSIM of two `h × w` planes by direct 2-D convolution with the 11×11
/// Gaussian window (σ = 1.5) over every valid window position.
pub fn ssim_direct(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    const K: usize = 11;
    let g1: Vec<f64> = (0..K).map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp()).collect();
    let mut win = [[0.0f64; K]; K];
    let mut total = 0.0;
    for (y, row) in win.iter_mut().enumerate() {
        for (x, v) in row.iter_mut().enumerate() {
            *v = g1[y] * g1[x];
            total += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut acc = 0.0;
    let mut count = 0;
    for oy in 0..=h - K {
        for ox in 0..=w - K {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for y in 0..K {
                for x in 0..K {
                    let g = win[y][x] / total;
                    let (va, vb) = (a[(oy + y) * w + ox + x], b[(oy + y) * w + ox + x]);
                    ma += g * va;
                    mb += g * vb;
                    saa += g * va * va;
                    sbb += g * vb * vb;
                    sab += g * va * vb;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            acc += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    acc / count as f64
}
