//! Dataset-level evaluation: prediction quality, the copy-last-frame baseline and
//! per-block routing usage.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;

use crate::data::{interval_subsample, ClipRecord};
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::metrics::{MetricAccumulator, MetricReport};
use crate::net::{predict_sequence, Dmvfn};
use crate::params::Session;
use crate::routing::{make_routing, Phase, RoutingMode};

/// Subset every clip contributes to.
pub const ALL: &str = "all";

fn subsets(clip: &ClipRecord) -> Vec<String> {
    let mut keys = vec![ALL.to_string()];
    keys.extend(clip.meta.subset.clone());
    keys
}

fn check_horizons(clips: &[ClipRecord], horizons: &[usize]) -> Result<usize> {
    if clips.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    if horizons.is_empty() || horizons.contains(&0) {
        return Err(Error::InvalidArgument(format!("horizons must be positive, got {horizons:?}")));
    }
    let max = *horizons.iter().max().expect("non-empty");
    for clip in clips {
        clip.horizon(max)?;
    }
    Ok(max)
}

/// Metrics of predicting `I_{t+j} = I_t` for every horizon `j`.
pub fn copy_last_baseline(clips: &[ClipRecord], horizons: &[usize]) -> Result<MetricReport> {
    check_horizons(clips, horizons)?;
    let mut acc = MetricAccumulator::default();
    for clip in clips {
        let last = clip.inputs().1.tensor();
        for &j in horizons {
            for key in subsets(clip) {
                acc.add_pair(&key, j, "", last, clip.horizon(j)?.tensor())?;
            }
        }
    }
    Ok(acc.report())
}

/// Rolls the model out to the largest horizon on every clip and reports model metrics
/// (`ms_ssim`, `psnr`) next to the copy-last baseline (`copy_last_ms_ssim`, `copy_last_psnr`).
pub fn evaluate(
    model: &Dmvfn,
    clips: &[ClipRecord],
    horizons: &[usize],
    mode: &RoutingMode,
    rng: &mut impl Rng,
) -> Result<MetricReport> {
    let max = check_horizons(clips, horizons)?;
    let mut acc = MetricAccumulator::default();
    for clip in clips {
        let (prev, cur) = clip.inputs();
        let batch = |f: &Frame| f.tensor().clone().reshape(&[1, 3, f.height(), f.width()]);
        let preds = predict_sequence(model, &batch(prev)?, &batch(cur)?, max, mode, rng)?;
        for &j in horizons {
            let truth = clip.horizon(j)?.tensor();
            let pred = preds[j - 1].clone().reshape(truth.dims())?;
            for key in subsets(clip) {
                acc.add_pair(&key, j, "", &pred, truth)?;
                acc.add_pair(&key, j, "copy_last_", cur.tensor(), truth)?;
            }
        }
    }
    Ok(acc.report())
}

/// How the clips of a usage report are grouped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupBy {
    /// Manifest subset tag, else the motion bin of synthetic clips.
    Motion,
    /// Each clip subsampled at intervals 1, 3 and 5 where it is long enough.
    Interval,
}

pub const USAGE_INTERVALS: [usize; 3] = [1, 3, 5];

/// Per-block mean of the sampled routing vector, per subset.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UsageStats {
    /// `subset → (Σ v_i per block, Σ w̃_i per block, sample count)`.
    pub subsets: BTreeMap<String, (Vec<f64>, Vec<f64>, usize)>,
}

impl UsageStats {
    fn add(&mut self, key: &str, v: &[f32], w: &[f32]) {
        let slot = self.subsets.entry(key.to_string()).or_insert_with(|| (vec![0.0; v.len()], vec![0.0; v.len()], 0));
        slot.0.iter_mut().zip(v).for_each(|(s, &x)| *s += x as f64);
        slot.1.iter_mut().zip(w).for_each(|(s, &x)| *s += x as f64);
        slot.2 += 1;
    }

    /// Usage rate of each block in `subset`.
    pub fn rates(&self, subset: &str) -> Option<Vec<f64>> {
        self.subsets.get(subset).map(|(s, _, n)| s.iter().map(|x| x / *n as f64).collect())
    }

    /// Mean selection probability `w̃_i` of each block in `subset`.
    pub fn mean_probs(&self, subset: &str) -> Option<Vec<f64>> {
        self.subsets.get(subset).map(|(_, s, n)| s.iter().map(|x| x / *n as f64).collect())
    }

    pub fn count(&self, subset: &str) -> usize {
        self.subsets.get(subset).map_or(0, |s| s.2)
    }

    pub const CSV_HEADER: &'static str = "subset,block,usage_rate,mean_prob,n";

    /// Rates in units of 10⁻².
    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for (key, (v, w, n)) in &self.subsets {
            for (i, (a, b)) in v.iter().zip(w).enumerate() {
                let (a, b) = (100.0 * a / *n as f64, 100.0 * b / *n as f64);
                writeln!(out, "{key},{},{a:.2},{b:.2},{n}", i + 1).unwrap();
            }
        }
        out
    }
}

/// Samples one inference routing vector per clip (from its first two frames) and
/// accumulates usage per subset.
pub fn usage_rate(
    model: &Dmvfn,
    clips: &[ClipRecord],
    mode: &RoutingMode,
    by: GroupBy,
    rng: &mut impl Rng,
) -> Result<UsageStats> {
    if clips.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    let mut stats = UsageStats::default();
    for clip in clips {
        let variants: Vec<(String, ClipRecord)> = match by {
            GroupBy::Motion => {
                let key = clip.meta.subset.clone().or_else(|| clip.meta.motion_bin().map(|b| b.name().to_string()));
                vec![(key.unwrap_or_else(|| ALL.to_string()), clip.clone())]
            }
            GroupBy::Interval => USAGE_INTERVALS
                .iter()
                .filter(|&&k| clip.len() > 2 * k)
                .map(|&k| Ok((format!("interval_{k}"), interval_subsample(clip, k)?)))
                .collect::<Result<_>>()?,
        };
        for (key, c) in variants {
            let (prev, cur) = c.inputs();
            let mut s = Session::new(&model.params, false);
            let dims = [1, 3, prev.height(), prev.width()];
            let p = s.constant(prev.tensor().clone().reshape(&dims)?);
            let q = s.constant(cur.tensor().clone().reshape(&dims)?);
            let r = make_routing(mode, &model.router, &mut s, p, q, Phase::Infer, 1.0, rng)?;
            stats.add(&key, r.v.data(), r.probs.data());
            if key != ALL {
                stats.add(ALL, r.v.data(), r.probs.data());
            }
        }
    }
    Ok(stats)
}
