use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Network shape. One entry of `channels` and `rates` per resolution level;
/// the first level has rate 1 (no downsampling before it).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub channels: Vec<usize>,
    pub rates: Vec<usize>,
    pub blocks_per_stage: usize,
    pub neighbors_h: usize,
    pub num_classes_k: usize,
    pub stem_channels: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            channels: vec![32, 64, 128, 256, 512],
            rates: vec![1, 2, 2, 4, 4],
            blocks_per_stage: 1,
            neighbors_h: 16,
            num_classes_k: 10,
            stem_channels: 32,
        }
    }
}

/// Number of per-point input features: raw and normalized position.
pub const INPUT_FEATURES: usize = 6;

/// Neighbors used when interpolating coarse features onto finer points.
pub const INTERP_NEIGHBORS: usize = 3;

impl ArchConfig {
    pub fn levels(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.channels.is_empty() {
            return bad("at least one level is required".into());
        }
        if self.channels.len() != self.rates.len() {
            return bad(format!(
                "{} channel entries but {} rates",
                self.channels.len(),
                self.rates.len()
            ));
        }
        if self.rates[0] != 1 {
            return bad(format!("first level rate must be 1, got {}", self.rates[0]));
        }
        if self.rates.contains(&0) || self.channels.contains(&0) {
            return bad("rates and channels must be positive".into());
        }
        if self.stem_channels != self.channels[0] {
            return bad(format!(
                "stem_channels {} must equal the first level width {}",
                self.stem_channels, self.channels[0]
            ));
        }
        if self.neighbors_h == 0 {
            return bad("neighbors_h must be positive".into());
        }
        if self.num_classes_k == 0 || self.num_classes_k > u8::MAX as usize {
            return bad(format!("num_classes_k {} outside 1..=255", self.num_classes_k));
        }
        Ok(())
    }

    /// Points per level for an input of `n` points.
    pub fn level_sizes(&self, n: usize) -> Result<Vec<usize>> {
        let mut sizes = Vec::with_capacity(self.rates.len());
        let mut cur = n;
        for &r in &self.rates {
            if r > cur {
                return Err(Error::BadRate { rate: r, count: cur });
            }
            cur = cur.div_ceil(r);
            sizes.push(cur);
        }
        Ok(sizes)
    }
}
