use super::tape::{Op, Tape, Var};

impl Tape {
    /// Arithmetic cost of the node `v`, split into named parts.
    ///
    /// A multiply-add counts as two FLOPs; bias additions, activations, resampling,
    /// warping and other elementwise work count one FLOP per output element. Pure
    /// data movement (concatenation, slicing) and leaves cost nothing.
    pub fn op_flops(&self, v: Var) -> Vec<(&'static str, u64)> {
        let node = &self.nodes[v.0];
        let out = node.value.len() as u64;
        let input_len = |x: &Var| self.nodes[x.0].value.len() as u64;
        match &node.op {
            Op::Leaf
            | Op::Concat { .. }
            | Op::Narrow { .. }
            | Op::BatchConcat { .. }
            | Op::BatchSlice { .. }
            | Op::Column { .. }
            | Op::Custom { .. } => Vec::new(),
            Op::Conv2d { b, geom, .. } => {
                let dims = node.value.dims();
                let (n, cout) = (dims[0] as u64, dims[1] as u64);
                let spatial = (geom.oh * geom.ow) as u64;
                let mut parts = vec![("conv", 2 * n * (geom.k * geom.k * geom.channels) as u64 * cout * spatial)];
                if b.is_some() {
                    parts.push(("bias", out));
                }
                parts
            }
            Op::ConvTranspose2d { x, b, geom, .. } => {
                let cout = geom.channels as u64;
                let macs = input_len(x) * cout * (geom.k * geom.k) as u64;
                let mut parts = vec![("conv_transpose", 2 * macs)];
                if b.is_some() {
                    parts.push(("bias", out));
                }
                parts
            }
            Op::Linear { x, b, .. } => {
                let fout = node.value.dims()[1] as u64;
                let mut parts = vec![("linear", 2 * input_len(x) * fout)];
                if b.is_some() {
                    parts.push(("bias", out));
                }
                parts
            }
            Op::Sum(x) | Op::Mean(x) | Op::GlobalAvgPool(x) => vec![("reduce", input_len(x))],
            Op::Resample { .. } => vec![("resample", out)],
            Op::Warp { .. } => vec![("warp", out)],
            Op::Sigmoid(_) | Op::Prelu { .. } | Op::Abs(_) => vec![("activation", out)],
            Op::Add(..)
            | Op::Sub(..)
            | Op::Mul(..)
            | Op::Scale(..)
            | Op::Shift(_)
            | Op::ScaleBatch { .. }
            | Op::Blend { .. }
            | Op::BudgetNormalize { .. } => vec![("elementwise", out)],
        }
    }
}
