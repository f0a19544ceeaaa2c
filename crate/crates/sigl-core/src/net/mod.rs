//! Network assembly: residual generator and discriminator built from the
//! layer wrappers, sized by a single [`NetworkConfig`].

pub mod attn;
pub mod blocks;
pub mod discriminator;
pub mod generator;
pub mod layers;

pub use discriminator::Discriminator;
pub use generator::Generator;

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Stage width multipliers, widest at the lowest resolution. Truncated to
/// one entry per resolution in the ladder, which caps the ladder at five
/// stages (base 4 → 64 pixels).
const WIDTH_PATTERN: [usize; 5] = [8, 8, 4, 2, 1];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkConfig {
    pub target_res: usize,
    pub base_res: usize,
    /// Channel multiplier; stage widths are ch·{8,8,4,2,1}.
    pub ch: usize,
    /// Latent dimension.
    pub nz: usize,
    /// Sentence embedding dimension.
    pub embed_dim: usize,
    pub leaky_slope: f64,
    /// Resolution at which the self-attention block sits in both networks;
    /// silently skipped when that resolution is not in the ladder.
    pub nonlocal_res: usize,
    pub blocks_per_stage: usize,
}

impl NetworkConfig {
    /// Desk-scale defaults: 32×32 output, ch=16.
    pub fn desk() -> Self {
        NetworkConfig {
            target_res: 32,
            base_res: 4,
            ch: 16,
            nz: 64,
            embed_dim: 256,
            leaky_slope: 0.2,
            nonlocal_res: 16,
            blocks_per_stage: 1,
        }
    }

    /// Smallest config that still exercises every code path except
    /// attention: 8×8 output, ch=4.
    pub fn miniature() -> Self {
        NetworkConfig {
            target_res: 8,
            ch: 4,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_res < 2 {
            return Err(Error::Dim {
                op: "network config",
                detail: format!("base resolution {} below 2", self.base_res),
            });
        }
        let mut r = self.base_res;
        let mut k = 0usize;
        while r < self.target_res {
            r *= 2;
            k += 1;
        }
        if r != self.target_res || k == 0 {
            return Err(Error::Dim {
                op: "network config",
                detail: format!(
                    "target {} is not base {} times 2^k for k ≥ 1",
                    self.target_res, self.base_res
                ),
            });
        }
        if k + 1 > WIDTH_PATTERN.len() {
            return Err(Error::Dim {
                op: "network config",
                detail: format!("{} stages exceed the {}-entry width pattern", k + 1, WIDTH_PATTERN.len()),
            });
        }
        if self.ch < 4 {
            return Err(Error::Dim {
                op: "network config",
                detail: format!("channel multiplier {} below 4", self.ch),
            });
        }
        if self.nz == 0 || self.embed_dim == 0 || self.blocks_per_stage == 0 {
            return Err(Error::Dim {
                op: "network config",
                detail: alloc::string::String::from("nz, embed_dim and blocks_per_stage must be positive"),
            });
        }
        Ok(())
    }

    /// Number of resolution doublings between base and target.
    pub fn n_ups(&self) -> usize {
        let mut r = self.base_res;
        let mut k = 0;
        while r < self.target_res {
            r *= 2;
            k += 1;
        }
        k
    }

    /// Channel count at each resolution in the ladder, index 0 = base.
    pub fn widths(&self) -> Vec<usize> {
        let stages = self.n_ups() + 1;
        WIDTH_PATTERN[..stages].iter().map(|&m| m * self.ch).collect()
    }

    /// Ladder index of the attention site, if the configured resolution is
    /// actually visited: base·2^j == nonlocal_res.
    pub fn attn_stage(&self) -> Option<usize> {
        let mut r = self.base_res;
        for j in 0..=self.n_ups() {
            if r == self.nonlocal_res {
                return Some(j);
            }
            r *= 2;
        }
        None
    }
}
