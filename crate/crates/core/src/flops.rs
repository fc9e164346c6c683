//! Static and routing-dependent FLOP counts.
//!
//! Counts are taken from the operations the model actually records for one sample, so
//! the ledger always matches the architecture. Convention: one multiply-add is two
//! FLOPs; biases, activations, resampling, warping and elementwise arithmetic cost one
//! FLOP per output element.

use crate::error::{Error, Result};
use crate::net::{BlockState, Dmvfn};
use crate::params::Session;
use crate::tensor::Tensor;
use crate::warp::VOXEL_FLOW_CHANNELS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Scope {
    Routing,
    Block(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlopEntry {
    pub scope: Scope,
    pub kind: &'static str,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlopsLedger {
    pub height: usize,
    pub width: usize,
    pub entries: Vec<FlopEntry>,
    pub block_totals: Vec<u64>,
    pub routing_total: u64,
}

/// `2·k²·C_in·C_out·H_out·W_out`.
pub fn conv_flops(cin: usize, cout: usize, k: usize, oh: usize, ow: usize) -> u64 {
    2 * (k * k * cin * cout * oh * ow) as u64
}

impl FlopsLedger {
    /// All blocks without the routing network.
    pub fn super_network_total(&self) -> u64 {
        self.block_totals.iter().sum()
    }

    /// Everything the model can execute for one sample: every block plus the router.
    pub fn static_total(&self) -> u64 {
        self.super_network_total() + self.routing_total
    }

    /// Router plus the selected blocks.
    pub fn dynamic_total(&self, selected: &[bool]) -> Result<u64> {
        self.check_len(selected.len())?;
        Ok(self.routing_total + self.block_totals.iter().zip(selected).filter(|(_, &s)| s).map(|(t, _)| t).sum::<u64>())
    }

    /// Router plus the blocks weighted by their selection rates.
    pub fn expected_total(&self, rates: &[f32]) -> Result<f64> {
        self.check_len(rates.len())?;
        Ok(self.routing_total as f64
            + self.block_totals.iter().zip(rates).map(|(&t, &r)| t as f64 * r as f64).sum::<f64>())
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.block_totals.len() {
            return Err(Error::shape("flops", format!("{n} routing entries for {} blocks", self.block_totals.len())));
        }
        Ok(())
    }

    /// Sum of entries by kind within one scope.
    pub fn by_kind(&self, scope: Scope) -> Vec<(&'static str, u64)> {
        let mut out: Vec<(&'static str, u64)> = Vec::new();
        for e in self.entries.iter().filter(|e| e.scope == scope) {
            match out.iter_mut().find(|(k, _)| *k == e.kind) {
                Some(slot) => slot.1 += e.flops,
                None => out.push((e.kind, e.flops)),
            }
        }
        out
    }
}

/// Counts per-sample FLOPs of `model` on `h × w` frames.
pub fn count_flops(model: &Dmvfn, h: usize, w: usize) -> Result<FlopsLedger> {
    model.check_frame_size(h, w)?;
    let mut s = Session::new(&model.params, false);
    let prev = s.constant(Tensor::zeros(&[1, 3, h, w]));
    let cur = s.constant(Tensor::zeros(&[1, 3, h, w]));
    let mut entries = Vec::new();
    let mut record = |s: &Session, scope: Scope, range: std::ops::Range<usize>| -> u64 {
        let mut total = 0;
        for i in range {
            for (kind, flops) in s.tape.op_flops(crate::Var(i)) {
                total += flops;
                entries.push(FlopEntry { scope, kind, flops });
            }
        }
        total
    };

    let start = s.tape.len();
    model.router.logits(&mut s, prev, cur)?;
    let routing_total = record(&s, Scope::Routing, start..s.tape.len());

    let mut state = BlockState {
        frame: s.constant(Tensor::zeros(&[1, 3, h, w])),
        flow: s.constant(Tensor::zeros(&[1, VOXEL_FLOW_CHANNELS, h, w])),
    };
    let mut block_totals = Vec::with_capacity(model.len());
    for (i, block) in model.blocks.iter().enumerate() {
        let start = s.tape.len();
        state = block.forward(&mut s, prev, cur, state)?.state;
        block_totals.push(record(&s, Scope::Block(i), start..s.tape.len()));
    }
    Ok(FlopsLedger { height: h, width: w, entries, block_totals, routing_total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::ModelConfig;
    use crate::Tape;

    fn small_model() -> Dmvfn {
        let config = ModelConfig {
            schedule: vec![4, 2, 1],
            width_x4: 8,
            width_x2: 8,
            width_x1: 8,
            spatial_width: 4,
            routing_width: 4,
            ..ModelConfig::default()
        };
        Dmvfn::new(config, 0).unwrap()
    }

    #[test]
    fn single_conv_count() {
        assert_eq!(conv_flops(1, 1, 3, 8, 8), 1152);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 8, 8]));
        let w = tape.constant(Tensor::zeros(&[1, 1, 3, 3]));
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = tape.conv2d(x, w, Some(b), 1, 1).unwrap();
        assert_eq!(tape.op_flops(y), vec![("conv", 1152), ("bias", 64)]);
    }

    #[test]
    fn transposed_conv_and_linear_counts() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 4, 4]));
        let w = tape.constant(Tensor::zeros(&[2, 3, 4, 4]));
        let y = tape.conv_transpose2d(x, w, None, 2, 1).unwrap();
        assert_eq!(tape.dims(y), &[1, 3, 8, 8]);
        assert_eq!(tape.op_flops(y), vec![("conv_transpose", 2 * 2 * 3 * 16 * 16)]);
        let x = tape.constant(Tensor::zeros(&[1, 5]));
        let w = tape.constant(Tensor::zeros(&[7, 5]));
        let y = tape.linear(x, w, None).unwrap();
        assert_eq!(tape.op_flops(y), vec![("linear", 70)]);
    }

    #[test]
    fn ledger_totals() {
        let model = small_model();
        let ledger = count_flops(&model, 32, 32).unwrap();
        assert_eq!(ledger.block_totals.len(), 3);
        assert!(ledger.routing_total > 0);
        assert!(ledger.block_totals.iter().all(|&t| t > 0));
        assert_eq!(ledger.dynamic_total(&[true; 3]).unwrap(), ledger.static_total());
        assert_eq!(ledger.dynamic_total(&[false; 3]).unwrap(), ledger.routing_total);
        assert_eq!(ledger.expected_total(&[1.0; 3]).unwrap(), ledger.static_total() as f64);
        let entries: u64 = ledger.entries.iter().map(|e| e.flops).sum();
        assert_eq!(entries, ledger.static_total());
        assert!(ledger.dynamic_total(&[true; 2]).is_err());
    }

    #[test]
    fn dynamic_total_grows_with_selection() {
        let ledger = count_flops(&small_model(), 32, 32).unwrap();
        for a in 0u8..8 {
            for b in 0u8..8 {
                if a & b == a {
                    let sa: Vec<bool> = (0..3).map(|i| a >> i & 1 == 1).collect();
                    let sb: Vec<bool> = (0..3).map(|i| b >> i & 1 == 1).collect();
                    assert!(ledger.dynamic_total(&sa).unwrap() <= ledger.dynamic_total(&sb).unwrap());
                }
            }
        }
    }

    #[test]
    fn routing_is_cheap_relative_to_default_network() {
        let model = Dmvfn::new(ModelConfig::default(), 0).unwrap();
        let ledger = count_flops(&model, 64, 64).unwrap();
        assert!(ledger.routing_total * 5 <= ledger.super_network_total());
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(count_flops(&small_model(), 30, 32).is_err());
    }
}
