//! Network architectures and the dual-domain machinery.
//!
//! Every convolution is bias-free so the instantiated conv-weight counts
//! match the closed forms in [`count`] exactly.

mod cd;
pub mod count;
mod dc;
mod kvnet;
mod layers;
mod unet;
mod vnet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cd::{cd_pool, cd_upsample};
pub use dc::{data_consistency, fuse, image_data_consistency};
pub use kvnet::{Batch, KvNet};
pub use layers::{se_attention, Init};
pub use unet::{UNet, UNetKind};
pub use vnet::VNet;

/// Which branches a KV-block runs. `KNetOnly` and `VNetOnly` are the
/// cascaded single-branch ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branches {
    #[default]
    Both,
    KNetOnly,
    VNetOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// V-Net entry channels.
    pub c_v: usize,
    /// K-Net entry channels (even: channel pairs are complex planes).
    pub c_k: usize,
    /// Encoder/decoder levels.
    #[serde(rename = "L")]
    pub levels: usize,
    /// Number of cascaded KV-blocks.
    #[serde(rename = "T")]
    pub blocks: usize,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
    #[serde(default = "default_se_reduction")]
    pub se_reduction: usize,
    #[serde(default)]
    pub branches: Branches,
}

fn default_slope() -> f64 {
    0.2
}

fn default_se_reduction() -> usize {
    8
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            c_v: 32,
            c_k: 8,
            levels: 3,
            blocks: 12,
            leaky_slope: default_slope(),
            se_reduction: default_se_reduction(),
            branches: Branches::Both,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::invalid(format!("model config: {msg}")));
        if self.c_v < 2 || self.c_k < 2 {
            return fail(format!("entry channels must be >= 2 (c_v={}, c_k={})", self.c_v, self.c_k));
        }
        if self.c_k % 2 != 0 {
            return fail(format!("c_k must be even, got {}", self.c_k));
        }
        if self.levels < 1 || self.blocks < 1 {
            return fail(format!("L and T must be >= 1 (L={}, T={})", self.levels, self.blocks));
        }
        if self.se_reduction < 1 {
            return fail("se_reduction must be >= 1".into());
        }
        if !self.leaky_slope.is_finite() {
            return fail("leaky_slope must be finite".into());
        }
        Ok(())
    }

    /// Spatial extents must be divisible by `2^L`.
    pub fn check_extent(&self, height: usize, width: usize) -> Result<()> {
        check_divisible(height, width, self.levels)
    }
}

pub(crate) fn check_divisible(height: usize, width: usize, levels: usize) -> Result<()> {
    let unit = 1usize << levels;
    if height % unit != 0 || width % unit != 0 || height == 0 || width == 0 {
        return Err(Error::invalid(format!(
            "spatial extent {height}x{width} must be divisible by 2^L = {unit}"
        )));
    }
    Ok(())
}
