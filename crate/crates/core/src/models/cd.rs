//! Cross-domain resampling of k-space feature maps: go to the image domain,
//! resample there, come back.

use crate::error::{Error, Result};
use crate::tensor::{Graph, PoolKind, Real, SpectralDirection, Var};

fn check_even_channels<F: Real>(g: &Graph<F>, op: &'static str, x: Var) -> Result<()> {
    let s = g.shape(x);
    if s.len() != 4 || s[1] % 2 != 0 {
        return Err(Error::shape(op, "x", "[N, C, H, W] with C even", s));
    }
    Ok(())
}

/// `fft2c ∘ pool ∘ ifft2c` over channel pairs.
pub fn cd_pool<F: Real>(g: &mut Graph<F>, x: Var, kind: PoolKind) -> Result<Var> {
    check_even_channels(g, "cd_pool", x)?;
    let img = g.spectral(x, SpectralDirection::Inverse)?;
    let pooled = g.pool(img, kind)?;
    g.spectral(pooled, SpectralDirection::Forward)
}

/// `fft2c ∘ conv_transpose(2×2, stride 2) ∘ ifft2c` over channel pairs.
/// `weight` is `[C, C, 2, 2]`, so the channel count is preserved.
pub fn cd_upsample<F: Real>(g: &mut Graph<F>, x: Var, weight: Var) -> Result<Var> {
    check_even_channels(g, "cd_upsample", x)?;
    let c = g.shape(x)[1];
    let ws = g.shape(weight);
    if ws != [c, c, 2, 2] {
        return Err(Error::shape("cd_upsample", "weight", format!("[{c}, {c}, 2, 2]"), ws));
    }
    let img = g.spectral(x, SpectralDirection::Inverse)?;
    let upsampled = g.conv_transpose2d(img, weight)?;
    g.spectral(upsampled, SpectralDirection::Forward)
}
