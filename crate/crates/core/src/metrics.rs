//! Image quality metrics and their dataset-level aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

/// Normalised 1-D Gaussian window.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// A single-channel image in f64.
#[derive(Clone, Debug)]
struct Plane {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Plane {
    /// Separable Gaussian filter without padding.
    fn filter(&self, g: &[f64; SSIM_WINDOW]) -> Plane {
        let (oh, ow) = (self.h + 1 - SSIM_WINDOW, self.w + 1 - SSIM_WINDOW);
        let mut tmp = vec![0.0; self.h * ow];
        for r in 0..self.h {
            let row = &self.data[r * self.w..(r + 1) * self.w];
            for c in 0..ow {
                tmp[r * ow + c] = g.iter().zip(&row[c..c + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
            }
        }
        let mut out = vec![0.0; oh * ow];
        for r in 0..oh {
            for (t, &gw) in g.iter().enumerate() {
                let src = &tmp[(r + t) * ow..(r + t + 1) * ow];
                out[r * ow..(r + 1) * ow].iter_mut().zip(src).for_each(|(o, s)| *o += gw * s);
            }
        }
        Plane { h: oh, w: ow, data: out }
    }

    fn zip(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane { h: self.h, w: self.w, data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect() }
    }

    /// 2×2 average pooling, dropping an odd trailing row/column.
    fn downsample(&self) -> Plane {
        let (oh, ow) = (self.h / 2, self.w / 2);
        let mut data = Vec::with_capacity(oh * ow);
        for r in 0..oh {
            for c in 0..ow {
                let at = |y: usize, x: usize| self.data[y * self.w + x];
                data.push(0.25 * (at(2 * r, 2 * c) + at(2 * r, 2 * c + 1) + at(2 * r + 1, 2 * c) + at(2 * r + 1, 2 * c + 1)));
            }
        }
        Plane { h: oh, w: ow, data }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean SSIM and mean contrast-structure term of one plane pair.
fn ssim_terms(a: &Plane, b: &Plane, g: &[f64; SSIM_WINDOW]) -> (f64, f64) {
    let mu_a = a.filter(g);
    let mu_b = b.filter(g);
    let aa = a.zip(a, |x, y| x * y).filter(g);
    let bb = b.zip(b, |x, y| x * y).filter(g);
    let ab = a.zip(b, |x, y| x * y).filter(g);
    let mut ssim = Vec::with_capacity(mu_a.data.len());
    let mut cs = Vec::with_capacity(mu_a.data.len());
    for i in 0..mu_a.data.len() {
        let (ma, mb) = (mu_a.data[i], mu_b.data[i]);
        let va = aa.data[i] - ma * ma;
        let vb = bb.data[i] - mb * mb;
        let cov = ab.data[i] - ma * mb;
        let c = (2.0 * cov + SSIM_C2) / (va + vb + SSIM_C2);
        let l = (2.0 * ma * mb + SSIM_C1) / (ma * ma + mb * mb + SSIM_C1);
        cs.push(c);
        ssim.push(l * c);
    }
    (mean(&ssim), mean(&cs))
}

/// Number of scales usable for an image whose shorter side is `min_side`:
/// the largest `s ≤ 5` with `min_side / 2^(s−1) ≥ 11`.
pub fn ms_ssim_scales(min_side: usize) -> usize {
    (1..=MS_SSIM_WEIGHTS.len()).rev().find(|&s| min_side >> (s - 1) >= SSIM_WINDOW).unwrap_or(0)
}

fn planes(t: &Tensor) -> Result<(usize, usize, usize)> {
    if t.rank() < 2 {
        return Err(Error::shape("metric", format!("need at least 2 dims, got {:?}", t.dims())));
    }
    let d = t.dims();
    let (h, w) = (d[d.len() - 2], d[d.len() - 1]);
    Ok((t.len() / (h * w).max(1), h, w))
}

fn check_pair(a: &Tensor, b: &Tensor) -> Result<(usize, usize, usize)> {
    if a.dims() != b.dims() {
        return Err(Error::shape("metric", format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    planes(a)
}

/// Multi-scale SSIM of two images with values on `[0, 1]`, computed per channel plane
/// and averaged. Uses as many of the five scales as fit an 11-pixel window, with the
/// weights of the scales used renormalised to sum to one.
pub fn ms_ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    let (n, h, w) = check_pair(a, b)?;
    let scales = ms_ssim_scales(h.min(w));
    if scales == 0 {
        return Err(Error::shape("ms_ssim", format!("{h}x{w} image is smaller than the {SSIM_WINDOW}-pixel window")));
    }
    let weights = &MS_SSIM_WEIGHTS[..scales];
    let wsum: f64 = weights.iter().sum();
    let g = gaussian_window();
    let mut total = 0.0;
    for p in 0..n {
        let take = |t: &Tensor| Plane { h, w, data: t.data()[p * h * w..(p + 1) * h * w].iter().map(|&x| x as f64).collect() };
        let (mut pa, mut pb) = (take(a), take(b));
        let mut value = 1.0;
        for (s, &wt) in weights.iter().enumerate() {
            let (ssim, cs) = ssim_terms(&pa, &pb, &g);
            let term = if s + 1 == scales { ssim } else { cs };
            value *= term.max(0.0).powf(wt / wsum);
            if s + 1 < scales {
                pa = pa.downsample();
                pb = pb.downsample();
            }
        }
        total += value;
    }
    Ok(total / n as f64)
}

/// `10·log10(1 / MSE)` for values on `[0, 1]`; identical inputs give [`PSNR_CAP`].
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_pair(a, b)?;
    let mse = a.data().iter().zip(b.data()).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / a.len() as f64;
    Ok(if mse == 0.0 { PSNR_CAP } else { -10.0 * mse.log10() })
}

/// One CSV row: `subset,horizon,metric,value,n`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub subset: String,
    pub horizon: usize,
    pub metric: String,
    pub value: f64,
    pub n: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "subset,horizon,metric,value,n";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            writeln!(out, "{},{},{},{:.4},{}", r.subset, r.horizon, r.metric, r.value, r.n).unwrap();
        }
        out
    }

    pub fn get(&self, subset: &str, horizon: usize, metric: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.subset == subset && r.horizon == horizon && r.metric == metric)
    }
}

/// Running sums of per-sample metrics keyed by `(subset, horizon, metric)`.
/// MS-SSIM means are reported in units of 10⁻².
#[derive(Clone, Debug, Default)]
pub struct MetricAccumulator {
    sums: BTreeMap<(String, usize, String), (f64, usize)>,
}

impl MetricAccumulator {
    pub fn add(&mut self, subset: &str, horizon: usize, metric: &str, value: f64) {
        let slot = self.sums.entry((subset.to_string(), horizon, metric.to_string())).or_default();
        slot.0 += value;
        slot.1 += 1;
    }

    /// Adds MS-SSIM and PSNR of `pred` against `truth` under `prefix` (`""` or e.g. `"copy_last_"`).
    pub fn add_pair(&mut self, subset: &str, horizon: usize, prefix: &str, pred: &Tensor, truth: &Tensor) -> Result<()> {
        self.add(subset, horizon, &format!("{prefix}ms_ssim"), ms_ssim(pred, truth)? * 100.0);
        self.add(subset, horizon, &format!("{prefix}psnr"), psnr(pred, truth)?);
        Ok(())
    }

    pub fn report(&self) -> MetricReport {
        let rows = self
            .sums
            .iter()
            .map(|((subset, horizon, metric), &(sum, n))| MetricRow {
                subset: subset.clone(),
                horizon: *horizon,
                metric: metric.clone(),
                value: sum / n as f64,
                n,
            })
            .collect();
        MetricReport { rows }
    }
}
