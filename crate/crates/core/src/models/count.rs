//! Closed-form parameter counts and the instantiated-store audit.
//!
//! V-Net terms, for entry width `c` and `L` levels:
//!
//! ```text
//! C_d  = (2c + c^2 + sum_{i=1}^{L-1} (2^{i-1}c * 2^i c + 2^i c * 2^i c)) * 9
//! C_e  = 2c + (2c^2 + sum_{i=1}^{L-1} (2^i c * 2^{i-1}c + 2^{i-1}c * 2^{i-1}c)) * 9
//! C_bn = (2^{L-1}c * 2^L c + 2^L c * 2^{L-1}c) * 9
//! C_up = (sum_{i=1}^{L} 2^{i-1}c * 2^{i-1}c) * 4
//! C_v  = C_d + C_e + C_bn + C_up
//! ```
//!
//! The reference U-Net count [`unet`] follows the layer list in
//! [`super::UNet`]; it gives 1,923,712 at `c = 32, L = 3` (ratio 1.719 to the
//! V-Net). The U-Net expression as commonly transcribed, [`unet_as_printed`],
//! drops the doubled bottleneck width and evaluates to 1,628,800 instead.

use super::layers::Init;
use crate::error::Result;
use crate::tensor::{ParamStore, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VNetCount {
    pub encoder: u64,
    pub decoder: u64,
    pub bottleneck: u64,
    pub upsampling: u64,
}

impl VNetCount {
    pub fn total(&self) -> u64 {
        self.encoder + self.decoder + self.bottleneck + self.upsampling
    }
}

fn w(c: u64, i: u32) -> u64 {
    c << i
}

fn encoder(c: u64, l: u32) -> u64 {
    let inner: u64 = (1..l).map(|i| w(c, i - 1) * w(c, i) + w(c, i) * w(c, i)).sum();
    (2 * c + c * c + inner) * 9
}

pub fn vnet_terms(c: usize, levels: usize) -> VNetCount {
    let (c, l) = (c as u64, levels as u32);
    let dec_inner: u64 = (1..l).map(|i| w(c, i) * w(c, i - 1) + w(c, i - 1) * w(c, i - 1)).sum();
    VNetCount {
        encoder: encoder(c, l),
        decoder: 2 * c + (2 * c * c + dec_inner) * 9,
        bottleneck: (w(c, l - 1) * w(c, l) + w(c, l) * w(c, l - 1)) * 9,
        upsampling: (1..=l).map(|i| w(c, i - 1) * w(c, i - 1)).sum::<u64>() * 4,
    }
}

pub fn vnet(c: usize, levels: usize) -> u64 {
    vnet_terms(c, levels).total()
}

/// Shared by U-Net and K-Net: everything except the upsampling path.
fn unet_body(c: u64, l: u32) -> u64 {
    let bottleneck = (w(c, l - 1) * w(c, l) + w(c, l) * w(c, l)) * 9;
    let decoder: u64 = (1..=l).map(|i| (w(c, i) * w(c, i - 1) + w(c, i - 1) * w(c, i - 1)) * 9).sum();
    encoder(c, l) + bottleneck + decoder + 2 * c
}

pub fn unet(c: usize, levels: usize) -> u64 {
    let (c, l) = (c as u64, levels as u32);
    unet_body(c, l) + (1..=l).map(|i| w(c, i) * w(c, i - 1) * 4).sum::<u64>()
}

/// K-Net: channel-preserving 2×2 cross-domain upsampling plus a 1×1 halving conv.
pub fn knet(c: usize, levels: usize) -> u64 {
    let (c, l) = (c as u64, levels as u32);
    unet_body(c, l) + (1..=l).map(|i| w(c, i) * w(c, i) * 4 + w(c, i) * w(c, i - 1)).sum::<u64>()
}

/// Conv weights of a `T`-block cascade with both branches.
pub fn kvnet(c_v: usize, c_k: usize, levels: usize, blocks: usize) -> u64 {
    blocks as u64 * (vnet(c_v, levels) + knet(c_k, levels))
}

/// The U-Net expression evaluated term by term as transcribed, with a
/// bottleneck of `2^{L-1}c -> 2^L c -> 2^{L-1}c`.
pub fn unet_as_printed(c: usize, levels: usize) -> u64 {
    let (c, l) = (c as u64, levels as u32);
    let dec: u64 = (1..=l).map(|i| w(c, i) * w(c, i - 1) + w(c, i - 1) * w(c, i - 1)).sum();
    let bn = w(c, l - 1) * w(c, l) + w(c, l) * w(c, l - 1);
    let up: u64 = (1..=l).map(|i| w(c, i) * w(c, i - 1)).sum();
    encoder(c, l) + 2 * c + dec * 9 + bn * 9 + up * 4
}

/// `C_u / C_v`.
pub fn ratio(c: usize, levels: usize) -> f64 {
    unet(c, levels) as f64 / vnet(c, levels) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Include {
    /// Convolution and transposed-convolution weights only.
    ConvOnly,
    All,
}

pub fn instantiated<F: Real>(store: &ParamStore<F>, include: Include) -> u64 {
    store
        .iter()
        .filter(|(_, p)| include == Include::All || p.kind.is_conv())
        .map(|(_, p)| p.tensor.numel() as u64)
        .sum()
}

/// A network family for counting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arch {
    VNet,
    UNet,
    KNet,
    KvNet,
}

impl std::str::FromStr for Arch {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vnet" => Ok(Arch::VNet),
            "unet" => Ok(Arch::UNet),
            "knet" => Ok(Arch::KNet),
            "kvnet" => Ok(Arch::KvNet),
            other => Err(crate::error::Error::invalid(format!(
                "unknown architecture {other:?} (expected vnet, unet, knet or kvnet)"
            ))),
        }
    }
}

/// Sizes for `closed_form` and `instantiate`. `c` is the V-Net/U-Net/K-Net
/// entry width; `c_k` and `blocks` only matter for `KvNet`.
#[derive(Clone, Copy, Debug)]
pub struct Size {
    pub c: usize,
    pub levels: usize,
    pub c_k: usize,
    pub blocks: usize,
}

pub fn closed_form(arch: Arch, s: Size) -> u64 {
    match arch {
        Arch::VNet => vnet(s.c, s.levels),
        Arch::UNet => unet(s.c, s.levels),
        Arch::KNet => knet(s.c, s.levels),
        Arch::KvNet => kvnet(s.c, s.c_k, s.levels, s.blocks),
    }
}

/// Freshly initialised parameters of one network.
pub fn instantiate(arch: Arch, s: Size) -> Result<ParamStore<f32>> {
    let slope = 0.2;
    let mut store = ParamStore::new();
    match arch {
        Arch::KvNet => {
            let cfg = super::ModelConfig {
                c_v: s.c,
                c_k: s.c_k,
                levels: s.levels,
                blocks: s.blocks,
                ..super::ModelConfig::default()
            };
            return super::KvNet::new(cfg)?.init_params(0);
        }
        Arch::VNet => super::VNet::new("vnet", s.c, s.levels, slope, 8).init(&mut Init::new(&mut store, 0, slope))?,
        Arch::UNet => super::UNet::new("unet", s.c, s.levels, slope, super::UNetKind::Plain)
            .init(&mut Init::new(&mut store, 0, slope))?,
        Arch::KNet => super::UNet::knet("knet", s.c, s.levels, slope).init(&mut Init::new(&mut store, 0, slope))?,
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reported_sizes() {
        assert_eq!(vnet(32, 3), 1_118_848);
        assert_eq!(unet(32, 3), 1_923_712);
        assert_eq!(unet_as_printed(32, 3), 1_628_800);
        assert!((ratio(32, 3) - 1.7194).abs() < 1e-4);
        assert_eq!(vnet(8, 3), 70_048);
        assert_eq!(unet(8, 3), 120_352);
        assert_eq!(knet(8, 3), 133_792);
    }

    #[test]
    fn vnet_terms_at_reference_size() {
        let t = vnet_terms(32, 3);
        assert_eq!(t.encoder, 286_272);
        assert_eq!(t.decoder, 156_736);
        assert_eq!(t.bottleneck, 589_824);
        assert_eq!(t.upsampling, 86_016);
    }

    #[test]
    fn small_c_is_a_sixteenth_up_to_linear_terms() {
        let r = vnet(8, 3) as f64 / (vnet(32, 3) as f64 / 16.0);
        assert!((r - 1.0).abs() < 0.002);
    }
}
