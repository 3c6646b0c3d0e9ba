use crate::error::{Error, Result};
use crate::fourier::{ComplexImage, Domain};
use crate::sampling::{apply_mask, zero_fill, Mask};
use crate::tensor::Real;

/// Mixes a base seed with a sequence of tags (splitmix64 finaliser per step).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut h = base;
    for &p in parts {
        h = h.wrapping_add(p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
    }
    h
}

/// One slice ready for the network. Everything except `truth` is divided by
/// `scale`, the maximum magnitude of the zero-filled image.
#[derive(Clone, Debug)]
pub struct PreparedSlice<F> {
    pub k_masked: ComplexImage<F>,
    pub mask: Mask,
    /// Normalised ground-truth magnitude.
    pub target: Vec<F>,
    /// Ground-truth magnitude in original units.
    pub truth: Vec<F>,
    pub scale: F,
}

impl<F: Real> PreparedSlice<F> {
    pub fn height(&self) -> usize {
        self.k_masked.height()
    }

    pub fn width(&self) -> usize {
        self.k_masked.width()
    }

    /// Dynamic range of the normalised target.
    pub fn target_range(&self) -> F {
        self.target.iter().fold(F::zero(), |m, &v| m.max(v))
    }

    /// Zero-filled magnitude in original units.
    pub fn zero_fill_magnitude(&self) -> Vec<F> {
        zero_fill(&self.k_masked)
            .magnitude()
            .into_iter()
            .map(|v| v * self.scale)
            .collect()
    }
}

pub fn prepare_slice<F: Real>(kspace: &ComplexImage<F>, mask: Mask) -> Result<PreparedSlice<F>> {
    if kspace.domain != Domain::KSpace {
        return Err(Error::invalid("prepare_slice expects k-space input"));
    }
    if !kspace.is_finite() {
        return Err(Error::NonFinite {
            what: "input k-space".into(),
        });
    }
    let mut k_masked = apply_mask(kspace, &mask)?;
    let scale = zero_fill(&k_masked)
        .magnitude()
        .into_iter()
        .fold(F::zero(), |m, v| m.max(v));
    if !(scale > F::zero()) {
        return Err(Error::invalid("masked k-space reconstructs to an all-zero image"));
    }
    k_masked.scale(F::one() / scale);
    let truth = crate::fourier::ifft2c(kspace).magnitude();
    if !(truth.iter().any(|&v| v > F::zero())) {
        return Err(Error::invalid("ground-truth slice is all zero"));
    }
    let target = truth.iter().map(|&v| v / scale).collect();
    Ok(PreparedSlice {
        k_masked,
        mask,
        target,
        truth,
        scale,
    })
}
