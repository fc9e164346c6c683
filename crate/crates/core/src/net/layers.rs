use rand::Rng;

use crate::error::Result;
use crate::params::{kaiming_uniform, ParamId, ParamStore, Session};
use crate::tensor::Tensor;
use crate::Var;

/// Initial PReLU slope.
pub const PRELU_INIT: f32 = 0.25;

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), kaiming_uniform(&[cout, cin, k, k], cin * k * k, rng))?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[cout]))?;
        Ok(Self { weight, bias, cin, cout, k, stride, pad })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let (w, b) = (s.param(self.weight), s.param(self.bias));
        s.tape.conv2d(x, w, Some(b), self.stride, self.pad)
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        ((h + 2 * self.pad - self.k) / self.stride + 1, (w + 2 * self.pad - self.k) / self.stride + 1)
    }
}

/// Convolution followed by a per-channel PReLU.
#[derive(Clone, Debug)]
pub struct ConvPrelu {
    pub conv: Conv,
    pub slope: ParamId,
}

impl ConvPrelu {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let conv = Conv::new(store, name, cin, cout, k, stride, pad, rng)?;
        let slope = store.add(format!("{name}.prelu"), Tensor::full(&[cout], PRELU_INIT))?;
        Ok(Self { conv, slope })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let y = self.conv.forward(s, x)?;
        let a = s.param(self.slope);
        s.tape.prelu(y, a)
    }
}

/// Transposed convolution, zero-initialised so its output starts at exactly zero.
#[derive(Clone, Debug)]
pub struct ConvTranspose {
    pub weight: ParamId,
    pub bias: ParamId,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose {
    pub fn zeroed(store: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), Tensor::zeros(&[cin, cout, k, k]))?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[cout]))?;
        Ok(Self { weight, bias, cin, cout, k, stride, pad })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let (w, b) = (s.param(self.weight), s.param(self.bias));
        s.tape.conv_transpose2d(x, w, Some(b), self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fin: usize,
    pub fout: usize,
}

impl Linear {
    pub fn zeroed(store: &mut ParamStore, name: &str, fin: usize, fout: usize) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), Tensor::zeros(&[fout, fin]))?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[fout]))?;
        Ok(Self { weight, bias, fin, fout })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let (w, b) = (s.param(self.weight), s.param(self.bias));
        s.tape.linear(x, w, Some(b))
    }
}
