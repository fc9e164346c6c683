use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::kernels::conv::{self, ConvGeom};
use crate::kernels::resample::Resample2d;
use crate::kernels::warp;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Gradient rule for a node whose backward pass is not derived from its forward map.
///
/// Returns one entry per parent, `None` for parents that receive no gradient.
pub trait CustomBackward {
    fn backward(&self, grad_out: &Tensor, parents: &[&Tensor]) -> Vec<Option<Tensor>>;
}

impl<F> CustomBackward for F
where
    F: Fn(&Tensor, &[&Tensor]) -> Vec<Option<Tensor>>,
{
    fn backward(&self, grad_out: &Tensor, parents: &[&Tensor]) -> Vec<Option<Tensor>> {
        self(grad_out, parents)
    }
}

pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Shift(Var),
    Sigmoid(Var),
    Abs(Var),
    Prelu { x: Var, slope: Var },
    Concat { inputs: Vec<Var> },
    Narrow { x: Var, start: usize },
    BatchConcat { inputs: Vec<Var> },
    BatchSlice { x: Var, start: usize },
    Sum(Var),
    Mean(Var),
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    ConvTranspose2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Resample { x: Var, plan: Rc<Resample2d> },
    GlobalAvgPool(Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    ScaleBatch { x: Var, s: Var },
    Column { x: Var, j: usize },
    Blend { a: Var, b: Var, m: Var },
    Warp { img: Var, flow: Var },
    BudgetNormalize { s: Var, beta: f32 },
    Custom { parents: Vec<Var>, rule: Box<dyn CustomBackward> },
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op,
}

/// Records operations for a single forward/backward pass.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    grads: Vec<Option<Vec<f32>>>,
    consumed: bool,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.nodes.len()).field("consumed", &self.consumed).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a constant input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Records a trainable input whose gradient is collected by [`backward`](Self::backward).
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, requires_grad, op: Op::Leaf });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        debug_assert!(parents.iter().all(|p| p.0 < self.nodes.len()));
        self.nodes.push(Node { value, requires_grad, op });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.dims()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated into `v` by the last backward pass.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads[v.0].as_ref()?;
        Some(Tensor::new(self.dims(v), g.clone()).expect("gradient shape"))
    }

    /// Records a node with a caller-supplied gradient rule. `value` is the forward
    /// result; the rule may ignore how it was produced.
    pub fn custom(&mut self, parents: &[Var], value: Tensor, rule: Box<dyn CustomBackward>) -> Var {
        self.push(value, Op::Custom { parents: parents.to_vec(), rule }, parents)
    }

    /// Straight-through node: forward emits `sample`, backward hands the upstream
    /// gradient to `source` unchanged.
    pub fn straight_through(&mut self, source: Var, sample: Tensor) -> Result<Var> {
        if sample.dims() != self.dims(source) {
            return Err(Error::shape(
                "straight_through",
                format!("sample {:?} vs source {:?}", sample.dims(), self.dims(source)),
            ));
        }
        let rule = |g: &Tensor, _: &[&Tensor]| vec![Some(g.clone())];
        Ok(self.custom(&[source], sample, Box::new(rule)))
    }

    /// Runs the reverse sweep from a single-element `root`.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Tape("tape already consumed by a previous backward pass".into()));
        }
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::Tape(format!(
                "backward root must be a scalar, got dims {:?}",
                self.dims(root)
            )));
        }
        self.consumed = true;
        self.grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            let contributions = self.node_backward(i, &g);
            self.grads[i] = Some(g);
            for (parent, delta) in contributions {
                match &mut self.grads[parent.0] {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                    slot @ None => *slot = Some(delta),
                }
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn val(&self, v: Var) -> &[f32] {
        self.nodes[v.0].value.data()
    }

    fn zeros_like(&self, v: Var) -> Vec<f32> {
        vec![0.0; self.nodes[v.0].value.len()]
    }

    fn node_backward(&self, i: usize, g: &[f32]) -> Vec<(Var, Vec<f32>)> {
        let node = &self.nodes[i];
        let out = node.value.data();
        let mut res: Vec<(Var, Vec<f32>)> = Vec::with_capacity(3);
        let mut emit = |v: Var, f: &dyn Fn() -> Vec<f32>| {
            if self.wants(v) {
                res.push((v, f()));
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                emit(*a, &|| g.to_vec());
                emit(*b, &|| g.to_vec());
            }
            Op::Sub(a, b) => {
                emit(*a, &|| g.to_vec());
                emit(*b, &|| g.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                emit(*a, &|| g.iter().zip(bv).map(|(g, b)| g * b).collect());
                emit(*b, &|| g.iter().zip(av).map(|(g, a)| g * a).collect());
            }
            Op::Scale(a, s) => emit(*a, &|| g.iter().map(|x| x * s).collect()),
            Op::Shift(a) => emit(*a, &|| g.to_vec()),
            Op::Sigmoid(a) => emit(*a, &|| g.iter().zip(out).map(|(g, y)| g * y * (1.0 - y)).collect()),
            Op::Abs(a) => {
                let av = self.val(*a);
                emit(*a, &|| {
                    g.iter()
                        .zip(av)
                        .map(|(g, x)| if *x > 0.0 { *g } else if *x < 0.0 { -g } else { 0.0 })
                        .collect()
                })
            }
            Op::Prelu { x, slope } => {
                let xv = self.val(*x);
                let sv = self.val(*slope);
                let (n, c, h, w) = self.nodes[x.0].value.nchw().expect("prelu input");
                let plane = h * w;
                emit(*x, &|| {
                    let mut gx = g.to_vec();
                    for b in 0..n {
                        for ch in 0..c {
                            let off = (b * c + ch) * plane;
                            for p in off..off + plane {
                                if xv[p] < 0.0 {
                                    gx[p] *= sv[ch];
                                }
                            }
                        }
                    }
                    gx
                });
                emit(*slope, &|| {
                    let mut gs = vec![0.0; c];
                    for b in 0..n {
                        for (ch, acc) in gs.iter_mut().enumerate() {
                            let off = (b * c + ch) * plane;
                            *acc += (off..off + plane).filter(|&p| xv[p] < 0.0).map(|p| g[p] * xv[p]).sum::<f32>();
                        }
                    }
                    gs
                });
            }
            Op::Concat { inputs } => {
                let (n, c_total, h, w) = node.value.nchw().expect("concat output");
                let plane = h * w;
                let mut c0 = 0;
                for v in inputs {
                    let c = self.dims(*v)[1];
                    emit(*v, &|| {
                        let mut gv = Vec::with_capacity(n * c * plane);
                        for b in 0..n {
                            let off = (b * c_total + c0) * plane;
                            gv.extend_from_slice(&g[off..off + c * plane]);
                        }
                        gv
                    });
                    c0 += c;
                }
            }
            Op::Narrow { x, start } => {
                let (n, c_in, h, w) = self.nodes[x.0].value.nchw().expect("narrow input");
                let c = node.value.dims()[1];
                let plane = h * w;
                emit(*x, &|| {
                    let mut gx = self.zeros_like(*x);
                    for b in 0..n {
                        let dst = (b * c_in + start) * plane;
                        gx[dst..dst + c * plane].copy_from_slice(&g[b * c * plane..(b + 1) * c * plane]);
                    }
                    gx
                });
            }
            Op::BatchConcat { inputs } => {
                let mut off = 0;
                for v in inputs {
                    let len = self.nodes[v.0].value.len();
                    emit(*v, &|| g[off..off + len].to_vec());
                    off += len;
                }
            }
            Op::BatchSlice { x, start } => {
                let xt = &self.nodes[x.0].value;
                let per = xt.len() / xt.dims()[0];
                emit(*x, &|| {
                    let mut gx = self.zeros_like(*x);
                    gx[start * per..start * per + g.len()].copy_from_slice(g);
                    gx
                });
            }
            Op::Sum(a) => emit(*a, &|| vec![g[0]; self.nodes[a.0].value.len()]),
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.len();
                emit(*a, &|| vec![g[0] / n as f32; n]);
            }
            Op::Conv2d { x, w, b, geom } => {
                let n = self.dims(*x)[0];
                let cout = self.dims(*w)[0];
                let (xv, wv) = (self.val(*x), self.val(*w));
                let mut gx = self.wants(*x).then(|| self.zeros_like(*x));
                let mut gw = self.wants(*w).then(|| self.zeros_like(*w));
                let mut gb = b.filter(|b| self.wants(*b)).map(|b| self.zeros_like(b));
                conv::conv2d_backward(xv, n, geom, wv, cout, g, gx.as_deref_mut(), gw.as_deref_mut(), gb.as_deref_mut());
                res.extend(gx.map(|d| (*x, d)));
                res.extend(gw.map(|d| (*w, d)));
                res.extend(gb.map(|d| (b.unwrap(), d)));
            }
            Op::ConvTranspose2d { x, w, b, geom } => {
                let (n, cin) = (self.dims(*x)[0], self.dims(*x)[1]);
                let (xv, wv) = (self.val(*x), self.val(*w));
                let mut gx = self.wants(*x).then(|| self.zeros_like(*x));
                let mut gw = self.wants(*w).then(|| self.zeros_like(*w));
                let mut gb = b.filter(|b| self.wants(*b)).map(|b| self.zeros_like(b));
                conv::conv_transpose2d_backward(xv, n, cin, geom, wv, g, gx.as_deref_mut(), gw.as_deref_mut(), gb.as_deref_mut());
                res.extend(gx.map(|d| (*x, d)));
                res.extend(gw.map(|d| (*w, d)));
                res.extend(gb.map(|d| (b.unwrap(), d)));
            }
            Op::Resample { x, plan } => {
                let d = self.dims(*x);
                let planes = d[0] * d[1];
                emit(*x, &|| {
                    let mut gx = self.zeros_like(*x);
                    plan.apply_adjoint(g, planes, &mut gx);
                    gx
                });
            }
            Op::GlobalAvgPool(x) => {
                let (n, c, h, w) = self.nodes[x.0].value.nchw().expect("pool input");
                let plane = h * w;
                emit(*x, &|| {
                    let mut gx = Vec::with_capacity(n * c * plane);
                    for gv in &g[..n * c] {
                        gx.extend(std::iter::repeat_n(gv / plane as f32, plane));
                    }
                    gx
                });
            }
            Op::Linear { x, w, b } => {
                let (n, fin) = (self.dims(*x)[0], self.dims(*x)[1]);
                let fout = self.dims(*w)[0];
                let (xv, wv) = (self.val(*x), self.val(*w));
                emit(*x, &|| {
                    let mut gx = vec![0.0; n * fin];
                    crate::kernels::gemm(n, fout, fin, g, (fout, 1), wv, (fin, 1), 0.0, &mut gx, (fin, 1));
                    gx
                });
                emit(*w, &|| {
                    let mut gw = vec![0.0; fout * fin];
                    crate::kernels::gemm(fout, n, fin, g, (1, fout), xv, (fin, 1), 0.0, &mut gw, (fin, 1));
                    gw
                });
                if let Some(b) = b {
                    emit(*b, &|| (0..fout).map(|o| (0..n).map(|r| g[r * fout + o]).sum()).collect());
                }
            }
            Op::ScaleBatch { x, s } => {
                let (xv, sv) = (self.val(*x), self.val(*s));
                let n = sv.len();
                let per = xv.len() / n;
                emit(*x, &|| g.iter().enumerate().map(|(i, g)| g * sv[i / per]).collect());
                emit(*s, &|| {
                    (0..n)
                        .map(|b| {
                            let r = b * per..(b + 1) * per;
                            g[r.clone()].iter().zip(&xv[r]).map(|(g, x)| g * x).sum()
                        })
                        .collect()
                });
            }
            Op::Column { x, j } => {
                let cols = self.dims(*x)[1];
                emit(*x, &|| {
                    let mut gx = self.zeros_like(*x);
                    for (r, gv) in g.iter().enumerate() {
                        gx[r * cols + j] = *gv;
                    }
                    gx
                });
            }
            Op::Blend { a, b, m } => {
                let (n, c, h, w) = self.nodes[a.0].value.nchw().expect("blend input");
                let plane = h * w;
                let (av, bv, mv) = (self.val(*a), self.val(*b), self.val(*m));
                let idx = |i: usize| (i / (c * plane)) * plane + i % plane;
                emit(*a, &|| g.iter().enumerate().map(|(i, g)| g * mv[idx(i)]).collect());
                emit(*b, &|| g.iter().enumerate().map(|(i, g)| g * (1.0 - mv[idx(i)])).collect());
                emit(*m, &|| {
                    let mut gm = vec![0.0; n * plane];
                    for (i, gv) in g.iter().enumerate() {
                        gm[idx(i)] += gv * (av[i] - bv[i]);
                    }
                    gm
                });
            }
            Op::Warp { img, flow } => {
                let (n, c, h, w) = self.nodes[img.0].value.nchw().expect("warp input");
                let mut gi = self.wants(*img).then(|| self.zeros_like(*img));
                let mut gf = self.wants(*flow).then(|| self.zeros_like(*flow));
                warp::warp_backward(self.val(*img), self.val(*flow), n, c, h, w, g, gi.as_deref_mut(), gf.as_deref_mut());
                res.extend(gi.map(|d| (*img, d)));
                res.extend(gf.map(|d| (*flow, d)));
            }
            Op::BudgetNormalize { s, beta } => {
                let sv = self.val(*s);
                let cols = self.dims(*s)[1];
                emit(*s, &|| {
                    let mut gs = vec![0.0; sv.len()];
                    let k = beta * cols as f32;
                    for r in 0..sv.len() / cols {
                        let row = &sv[r * cols..(r + 1) * cols];
                        let total: f32 = row.iter().sum();
                        // entries where the min(.., 1) clamp is active pass no gradient
                        let live = |j: usize| k * row[j] / total <= 1.0;
                        let cross: f32 = (0..cols).filter(|&j| live(j)).map(|j| g[r * cols + j] * row[j]).sum::<f32>() / total;
                        for j in 0..cols {
                            let own = if live(j) { g[r * cols + j] } else { 0.0 };
                            gs[r * cols + j] = k / total * (own - cross);
                        }
                    }
                    gs
                });
            }
            Op::Custom { parents, rule } => {
                let pv: Vec<&Tensor> = parents.iter().map(|p| &self.nodes[p.0].value).collect();
                let gt = Tensor::new(node.value.dims(), g.to_vec()).expect("custom grad shape");
                for (p, d) in parents.iter().zip(rule.backward(&gt, &pv)) {
                    if let Some(d) = d.filter(|_| self.wants(*p)) {
                        assert_eq!(d.dims(), self.dims(*p), "custom backward returned wrong shape");
                        res.push((*p, d.into_data()));
                    }
                }
            }
        }
        res
    }
}
