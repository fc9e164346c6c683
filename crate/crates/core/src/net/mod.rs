//! The multi-scale voxel flow block and the routed chain of blocks.

pub mod layers;
mod model;
mod mvfb;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use model::{predict_sequence, Dmvfn, ForwardOutput, Mode};
pub use mvfb::{BlockOutput, BlockState, MvfbBlock, MvfbConfig, INPUT_CHANNELS};

/// Number of blocks in the default chain.
pub const DEFAULT_BLOCKS: usize = 9;

/// Architecture hyper-parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Motion-path downsampling factor of each block, in chain order.
    pub schedule: Vec<usize>,
    /// Motion-path width of blocks with scale 4, 2 and 1.
    pub width_x4: usize,
    pub width_x2: usize,
    pub width_x1: usize,
    pub spatial_width: usize,
    pub spatial_path: bool,
    pub routing_width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            schedule: named_schedule("4,2,1").expect("builtin schedule"),
            width_x4: 64,
            width_x2: 48,
            width_x1: 32,
            spatial_width: 24,
            spatial_path: true,
            routing_width: 16,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schedule.is_empty() {
            return Err(Error::Config("scaling schedule is empty".into()));
        }
        if let Some(s) = self.schedule.iter().find(|s| ![1, 2, 4].contains(*s)) {
            return Err(Error::Config(format!("scale {s} not in {{1, 2, 4}}")));
        }
        let widths = [self.width_x4, self.width_x2, self.width_x1, self.spatial_width, self.routing_width];
        if widths.contains(&0) {
            return Err(Error::Config("channel widths must be at least 1".into()));
        }
        Ok(())
    }

    pub fn width_for(&self, scale: usize) -> usize {
        match scale {
            4 => self.width_x4,
            2 => self.width_x2,
            _ => self.width_x1,
        }
    }

    /// Spatial dims must be divisible by this so every resize and stride-2 stage is exact.
    pub fn size_multiple(&self) -> usize {
        let max_scale = self.schedule.iter().copied().max().unwrap_or(1);
        2 * max_scale
    }
}

/// Expands a named scaling schedule into per-block factors for a 9-block chain.
///
/// Accepts the compact names `"1"`, `"2"`, `"4"`, `"1,2"`, `"1,4"`, `"2,1"`, `"4,1"`,
/// `"1,2,4"`, `"4,2,1"` (brackets optional) or an explicit comma list of nine factors.
pub fn named_schedule(name: &str) -> Result<Vec<usize>> {
    let key: String = name.chars().filter(|c| !c.is_whitespace() && *c != '[' && *c != ']').collect();
    let rep = |parts: &[(usize, usize)]| parts.iter().flat_map(|&(s, k)| std::iter::repeat_n(s, k)).collect();
    let schedule = match key.as_str() {
        "1" => rep(&[(1, 9)]),
        "2" => rep(&[(2, 9)]),
        "4" => rep(&[(4, 9)]),
        "2,1" => rep(&[(2, 5), (1, 4)]),
        "4,2,1" => rep(&[(4, 3), (2, 3), (1, 3)]),
        "1,2" => rep(&[(1, 4), (2, 5)]),
        "1,4" => rep(&[(1, 4), (4, 5)]),
        "4,1" => rep(&[(4, 4), (1, 5)]),
        "1,2,4" => rep(&[(1, 3), (2, 3), (4, 3)]),
        other => other
            .split(',')
            .map(|p| p.parse::<usize>().map_err(|_| Error::Config(format!("bad scaling schedule {name:?}"))))
            .collect::<Result<Vec<_>>>()?,
    };
    Ok(schedule)
}
