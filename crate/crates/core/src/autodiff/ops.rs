use std::rc::Rc;

use super::tape::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::conv::{self, ConvGeom};
use crate::kernels::resample::{AxisTaps, Resample2d};
use crate::kernels::warp;
use crate::tensor::Tensor;

fn same_dims(t: &Tape, op: &'static str, a: Var, b: Var) -> Result<()> {
    if t.dims(a) != t.dims(b) {
        return Err(Error::shape(op, format!("{:?} vs {:?}", t.dims(a), t.dims(b))));
    }
    Ok(())
}

fn image_dims(t: &Tape, op: &'static str, v: Var) -> Result<(usize, usize, usize, usize)> {
    t.value(v).nchw().map_err(|_| Error::shape(op, format!("expected rank-4 image, got {:?}", t.dims(v))))
}

impl Tape {
    fn zip_map(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f32, f32) -> f32, node: Op) -> Result<Var> {
        same_dims(self, op, a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor::new(self.dims(a), data)?;
        Ok(self.push(value, node, &[a, b]))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f32) -> f32, node: Op) -> Var {
        let value = self.value(a).map(f);
        self.push(value, node, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn mul_scalar(&mut self, a: Var, s: f32) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f32) -> Var {
        self.unary(a, |x| x + s, Op::Shift(a))
    }

    /// `1 − a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.mul_scalar(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f32::abs, Op::Abs(a))
    }

    /// Parametric ReLU with one learnable slope per channel.
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        let (n, c, h, w) = image_dims(self, "prelu", x)?;
        if self.dims(slope) != [c] {
            return Err(Error::shape("prelu", format!("slope dims {:?} for {c} channels", self.dims(slope))));
        }
        let s = self.value(slope).data().to_vec();
        let plane = h * w;
        let mut data = self.value(x).data().to_vec();
        for b in 0..n {
            for (ch, a) in s.iter().enumerate() {
                let off = (b * c + ch) * plane;
                data[off..off + plane].iter_mut().filter(|v| **v < 0.0).for_each(|v| *v *= a);
            }
        }
        let value = Tensor::new(self.dims(x), data)?;
        Ok(self.push(value, Op::Prelu { x, slope }, &[x, slope]))
    }

    /// Concatenates images along the channel axis, preserving input order.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs.first().ok_or_else(|| Error::shape("concat_channels", "no inputs"))?;
        let (n, _, h, w) = image_dims(self, "concat_channels", first)?;
        let mut c_total = 0;
        for &v in inputs {
            let (n2, c, h2, w2) = image_dims(self, "concat_channels", v)?;
            if (n2, h2, w2) != (n, h, w) {
                return Err(Error::shape(
                    "concat_channels",
                    format!("{:?} vs {:?} (non-channel dims must agree)", self.dims(v), self.dims(first)),
                ));
            }
            c_total += c;
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * c_total * plane);
        for b in 0..n {
            for &v in inputs {
                let c = self.dims(v)[1];
                data.extend_from_slice(&self.value(v).data()[b * c * plane..(b + 1) * c * plane]);
            }
        }
        let value = Tensor::new(&[n, c_total, h, w], data)?;
        Ok(self.push(value, Op::Concat { inputs: inputs.to_vec() }, inputs))
    }

    /// Channels `[start, start + len)` of an image.
    pub fn narrow_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, c, h, w) = image_dims(self, "narrow_channels", x)?;
        if len == 0 || start + len > c {
            return Err(Error::shape("narrow_channels", format!("channels {start}..{} of {c}", start + len)));
        }
        let plane = h * w;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(n * len * plane);
        for b in 0..n {
            let off = (b * c + start) * plane;
            data.extend_from_slice(&src[off..off + len * plane]);
        }
        let value = Tensor::new(&[n, len, h, w], data)?;
        Ok(self.push(value, Op::Narrow { x, start }, &[x]))
    }

    pub fn batch_concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let parts: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
        let value = Tensor::stack_batch(&parts)?;
        Ok(self.push(value, Op::BatchConcat { inputs: inputs.to_vec() }, inputs))
    }

    pub fn batch_slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let value = self.value(x).batch_slice(start, len)?;
        Ok(self.push(value, Op::BatchSlice { x, start }, &[x]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum() as f32;
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = (t.sum() / t.len() as f64) as f32;
        self.push(Tensor::scalar(m), Op::Mean(a), &[a])
    }

    /// 2-D convolution. `weight` is `cout × cin × k × k`, `bias` is `cout`.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (n, cin, h, w) = image_dims(self, "conv2d", x)?;
        let (cout, geom) = match *self.dims(weight) {
            [cout, wc, k, k2] if wc == cin && k == k2 => {
                let geom = ConvGeom::new(cin, h, w, k, stride, pad).ok_or_else(|| {
                    Error::shape("conv2d", format!("kernel {k} stride {stride} pad {pad} does not fit input {h}x{w}"))
                })?;
                (cout, geom)
            }
            _ => {
                return Err(Error::shape(
                    "conv2d",
                    format!("weight {:?} incompatible with input {:?} (expected [cout, {cin}, k, k])", self.dims(weight), self.dims(x)),
                ))
            }
        };
        check_bias(self, "conv2d", bias, cout)?;
        let mut out = vec![0.0; n * cout * geom.oh * geom.ow];
        conv::conv2d_forward(
            self.value(x).data(),
            n,
            &geom,
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            cout,
            &mut out,
        );
        let value = Tensor::new(&[n, cout, geom.oh, geom.ow], out)?;
        let mut parents = vec![x, weight];
        parents.extend(bias);
        Ok(self.push(value, Op::Conv2d { x, w: weight, b: bias, geom }, &parents))
    }

    /// Transposed convolution. `weight` is `cin × cout × k × k`; output side is
    /// `(H − 1)·stride − 2·pad + k`.
    pub fn conv_transpose2d(&mut self, x: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (n, cin, h, w) = image_dims(self, "conv_transpose2d", x)?;
        let [wc, cout, k, k2] = *self.dims(weight) else {
            return Err(Error::shape("conv_transpose2d", format!("weight {:?} must be rank 4", self.dims(weight))));
        };
        if wc != cin || k != k2 {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("weight {:?} incompatible with input {:?} (expected [{cin}, cout, k, k])", self.dims(weight), self.dims(x)),
            ));
        }
        if stride == 0 || (h - 1) * stride + k < 2 * pad + 1 || (w - 1) * stride + k < 2 * pad + 1 {
            return Err(Error::shape("conv_transpose2d", format!("stride {stride} pad {pad} kernel {k} on {h}x{w}")));
        }
        let oh = (h - 1) * stride + k - 2 * pad;
        let ow = (w - 1) * stride + k - 2 * pad;
        let geom = ConvGeom::new(cout, oh, ow, k, stride, pad)
            .filter(|g| g.oh == h && g.ow == w)
            .ok_or_else(|| Error::shape("conv_transpose2d", "inconsistent geometry"))?;
        check_bias(self, "conv_transpose2d", bias, cout)?;
        let mut out = vec![0.0; n * cout * oh * ow];
        conv::conv_transpose2d_forward(
            self.value(x).data(),
            n,
            cin,
            &geom,
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            &mut out,
        );
        let value = Tensor::new(&[n, cout, oh, ow], out)?;
        let mut parents = vec![x, weight];
        parents.extend(bias);
        Ok(self.push(value, Op::ConvTranspose2d { x, w: weight, b: bias, geom }, &parents))
    }

    /// Applies a separable resampling plan to every channel plane.
    pub fn resample(&mut self, x: Var, plan: Rc<Resample2d>) -> Result<Var> {
        let (n, c, h, w) = image_dims(self, "resample", x)?;
        if plan.in_dims() != (h, w) {
            return Err(Error::shape("resample", format!("plan expects {:?}, input is {h}x{w}", plan.in_dims())));
        }
        let (oh, ow) = plan.out_dims();
        let mut out = vec![0.0; n * c * oh * ow];
        plan.apply(self.value(x).data(), n * c, &mut out);
        let value = Tensor::new(&[n, c, oh, ow], out)?;
        Ok(self.push(value, Op::Resample { x, plan }, &[x]))
    }

    /// Bilinear resize with half-pixel centres and edge-clamped reads.
    pub fn bilinear_resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (_, _, h, w) = image_dims(self, "bilinear_resize", x)?;
        if out_h == 0 || out_w == 0 {
            return Err(Error::shape("bilinear_resize", format!("output size {out_h}x{out_w}")));
        }
        let plan = Resample2d { y: AxisTaps::bilinear(h, out_h), x: AxisTaps::bilinear(w, out_w) };
        self.resample(x, Rc::new(plan))
    }

    /// Mean over each channel plane: `n × c × h × w → n × c`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = image_dims(self, "global_avg_pool", x)?;
        let plane = h * w;
        let data = self
            .value(x)
            .data()
            .chunks(plane)
            .map(|p| (p.iter().map(|&v| v as f64).sum::<f64>() / plane as f64) as f32)
            .collect();
        let value = Tensor::new(&[n, c], data)?;
        Ok(self.push(value, Op::GlobalAvgPool(x), &[x]))
    }

    /// `x · Wᵀ + b` with `x: n × in`, `W: out × in`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let [n, fin] = *self.dims(x) else {
            return Err(Error::shape("linear", format!("input must be n × features, got {:?}", self.dims(x))));
        };
        let fout = match *self.dims(weight) {
            [o, i] if i == fin => o,
            _ => return Err(Error::shape("linear", format!("weight {:?} for input {:?}", self.dims(weight), self.dims(x)))),
        };
        check_bias(self, "linear", bias, fout)?;
        let mut out = match bias {
            Some(b) => self.value(b).data().repeat(n),
            None => vec![0.0; n * fout],
        };
        crate::kernels::gemm(n, fin, fout, self.value(x).data(), (fin, 1), self.value(weight).data(), (1, fin), 1.0, &mut out, (fout, 1));
        let value = Tensor::new(&[n, fout], out)?;
        let mut parents = vec![x, weight];
        parents.extend(bias);
        Ok(self.push(value, Op::Linear { x, w: weight, b: bias }, &parents))
    }

    /// Multiplies every sample of `x` by the matching entry of the length-`n` vector `s`.
    pub fn scale_batch(&mut self, x: Var, s: Var) -> Result<Var> {
        let n = self.dims(x)[0];
        if self.dims(s) != [n] {
            return Err(Error::shape("scale_batch", format!("scale {:?} for batch {n}", self.dims(s))));
        }
        let sv = self.value(s).data().to_vec();
        let per = self.value(x).len() / n;
        let data = self.value(x).data().iter().enumerate().map(|(i, v)| v * sv[i / per]).collect();
        let value = Tensor::new(self.dims(x), data)?;
        Ok(self.push(value, Op::ScaleBatch { x, s }, &[x, s]))
    }

    /// Column `j` of an `n × k` matrix.
    pub fn column(&mut self, x: Var, j: usize) -> Result<Var> {
        let [n, k] = *self.dims(x) else {
            return Err(Error::shape("column", format!("expected matrix, got {:?}", self.dims(x))));
        };
        if j >= k {
            return Err(Error::shape("column", format!("column {j} of {k}")));
        }
        let data = (0..n).map(|r| self.value(x).data()[r * k + j]).collect();
        Ok(self.push(Tensor::new(&[n], data)?, Op::Column { x, j }, &[x]))
    }

    /// `a·m + b·(1 − m)` with a single-channel `m` broadcast over the channels of `a` and `b`.
    pub fn blend(&mut self, a: Var, b: Var, m: Var) -> Result<Var> {
        same_dims(self, "blend", a, b)?;
        let (n, c, h, w) = image_dims(self, "blend", a)?;
        if self.dims(m) != [n, 1, h, w] {
            return Err(Error::shape("blend", format!("mask {:?} for images {:?}", self.dims(m), self.dims(a))));
        }
        let plane = h * w;
        let (av, bv, mv) = (self.value(a).data(), self.value(b).data(), self.value(m).data());
        let data = (0..av.len())
            .map(|i| {
                let mm = mv[(i / (c * plane)) * plane + i % plane];
                av[i] * mm + bv[i] * (1.0 - mm)
            })
            .collect();
        let value = Tensor::new(self.dims(a), data)?;
        Ok(self.push(value, Op::Blend { a, b, m }, &[a, b, m]))
    }

    /// Backward warp: `out(p) = img(p + flow(p))`, bilinear, clamp-to-edge.
    pub fn warp(&mut self, img: Var, flow: Var) -> Result<Var> {
        let (n, c, h, w) = image_dims(self, "warp", img)?;
        if self.dims(flow) != [n, 2, h, w] {
            return Err(Error::shape("warp", format!("flow {:?} for image {:?}", self.dims(flow), self.dims(img))));
        }
        let mut out = vec![0.0; n * c * h * w];
        warp::warp_forward(self.value(img).data(), self.value(flow).data(), n, c, h, w, &mut out);
        let value = Tensor::new(self.dims(img), out)?;
        Ok(self.push(value, Op::Warp { img, flow }, &[img, flow]))
    }

    /// Row-wise budget normalisation `min(β·k·s_i / Σ_j s_j, 1)` of an `n × k` matrix of
    /// positive selection probabilities.
    pub fn budget_normalize(&mut self, s: Var, beta: f32) -> Result<Var> {
        let [_, k] = *self.dims(s) else {
            return Err(Error::shape("budget_normalize", format!("expected matrix, got {:?}", self.dims(s))));
        };
        let data = budget_normalize_rows(self.value(s).data(), k, beta);
        let value = Tensor::new(self.dims(s), data)?;
        Ok(self.push(value, Op::BudgetNormalize { s, beta }, &[s]))
    }
}

pub(crate) fn budget_normalize_rows(s: &[f32], k: usize, beta: f32) -> Vec<f32> {
    s.chunks(k)
        .flat_map(|row| {
            let total: f32 = row.iter().sum();
            row.iter().map(move |&v| (beta * k as f32 * v / total).min(1.0))
        })
        .collect()
}

#[inline]
pub(crate) fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_bias(t: &Tape, op: &'static str, bias: Option<Var>, cout: usize) -> Result<()> {
    match bias {
        Some(b) if t.dims(b) != [cout] => Err(Error::shape(op, format!("bias {:?} for {cout} outputs", t.dims(b)))),
        _ => Ok(()),
    }
}
