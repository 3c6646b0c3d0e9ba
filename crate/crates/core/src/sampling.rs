//! Cartesian phase-line undersampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{ifft2c, ComplexImage};
use crate::tensor::Real;

/// Binary sampling pattern over the `P` phase-encode lines (k-space columns).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    lines: Vec<bool>,
    pub center_fraction: f64,
    pub acceleration: f64,
    pub seed: u64,
    /// Set when the fully sampled center already exceeds the line budget.
    pub warning: Option<String>,
}

impl Mask {
    /// Wraps an explicit pattern (e.g. one read from disk).
    pub fn from_lines(lines: Vec<bool>) -> Result<Self> {
        if lines.is_empty() {
            return Err(Error::invalid("mask must have at least one line"));
        }
        if !lines.iter().any(|&b| b) {
            return Err(Error::invalid("mask samples no lines"));
        }
        let p = lines.len() as f64;
        let c = lines.iter().filter(|&&b| b).count() as f64;
        Ok(Self {
            lines,
            center_fraction: f64::NAN,
            acceleration: p / c,
            seed: 0,
            warning: None,
        })
    }

    pub fn full(p: usize) -> Self {
        Self {
            lines: vec![true; p],
            center_fraction: 1.0,
            acceleration: 1.0,
            seed: 0,
            warning: None,
        }
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn lines(&self) -> &[bool] {
        &self.lines
    }

    pub fn is_sampled(&self, column: usize) -> bool {
        self.lines[column]
    }

    pub fn sampled_count(&self) -> usize {
        self.lines.iter().filter(|&&b| b).count()
    }

    /// Mask as 0/1 values, one per column.
    pub fn as_weights<F: Real>(&self) -> Vec<F> {
        self.lines.iter().map(|&b| if b { F::one() } else { F::zero() }).collect()
    }
}

/// Number of fully sampled central lines, `round(P * center_fraction)`
/// (ties away from zero), at least one.
pub fn center_line_count(p: usize, center_fraction: f64) -> usize {
    ((p as f64 * center_fraction).round() as usize).clamp(1, p)
}

/// First index of the central block (fastMRI placement).
pub fn center_start(p: usize, n_center: usize) -> usize {
    (p - n_center + 1) / 2
}

/// Probability of keeping each non-central line so that `P / acceleration`
/// lines are sampled on average. Returns `(p, clamped)`.
pub fn outer_line_probability(p: usize, n_center: usize, acceleration: f64) -> (f64, bool) {
    if n_center >= p {
        return (0.0, false);
    }
    let raw = (p as f64 / acceleration - n_center as f64) / (p - n_center) as f64;
    if raw < 0.0 {
        (0.0, true)
    } else {
        (raw.min(1.0), raw > 1.0)
    }
}

/// Random Cartesian mask: a contiguous fully sampled center plus
/// independently drawn outer lines. Deterministic in `seed` (ChaCha8).
pub fn generate_random_mask(p: usize, center_fraction: f64, acceleration: f64, seed: u64) -> Result<Mask> {
    if p < 4 || p % 2 != 0 {
        return Err(Error::invalid(format!("mask length must be even and >= 4, got {p}")));
    }
    if !(center_fraction > 0.0 && center_fraction <= 1.0) {
        return Err(Error::invalid(format!("center fraction must be in (0, 1], got {center_fraction}")));
    }
    if !(acceleration >= 1.0) || !acceleration.is_finite() {
        return Err(Error::invalid(format!("acceleration must be >= 1, got {acceleration}")));
    }
    let n_center = center_line_count(p, center_fraction);
    let (prob, clamped) = outer_line_probability(p, n_center, acceleration);
    let warning = clamped.then(|| {
        format!(
            "line probability clamped: {n_center} center lines vs budget {:.2} lines",
            p as f64 / acceleration
        )
    });

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lines: Vec<bool> = (0..p).map(|_| rng.random::<f64>() < prob).collect();
    let start = center_start(p, n_center);
    lines[start..start + n_center].iter_mut().for_each(|b| *b = true);

    Ok(Mask {
        lines,
        center_fraction,
        acceleration,
        seed,
        warning,
    })
}

/// Zeroes every unsampled column of `k`; sampled columns are copied bit for bit.
pub fn apply_mask<F: Real>(k: &ComplexImage<F>, mask: &Mask) -> Result<ComplexImage<F>> {
    if mask.len() != k.width() {
        return Err(Error::shape(
            "apply_mask",
            "mask",
            format!("length {} (k-space width)", k.width()),
            &[mask.len()],
        ));
    }
    let mut out = k.clone();
    let w = k.width();
    for (idx, (r, i)) in out.re.iter_mut().zip(out.im.iter_mut()).enumerate() {
        if !mask.lines[idx % w] {
            *r = F::zero();
            *i = F::zero();
        }
    }
    Ok(out)
}

/// Baseline reconstruction: inverse transform of masked k-space.
pub fn zero_fill<F: Real>(k_masked: &ComplexImage<F>) -> ComplexImage<F> {
    ifft2c(k_masked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::Domain;

    #[test]
    fn paper_setting_probability() {
        let n_center = center_line_count(64, 0.08);
        assert_eq!(n_center, 5);
        let (p, clamped) = outer_line_probability(64, n_center, 4.0);
        assert!(!clamped);
        assert!((p - 11.0 / 59.0).abs() < 1e-15);
        assert!((p - 0.18644).abs() < 1e-5);
    }

    #[test]
    fn full_center_samples_everything() {
        let m = generate_random_mask(32, 1.0, 8.0, 3).unwrap();
        assert_eq!(m.sampled_count(), 32);
    }

    #[test]
    fn oversized_center_is_clamped_with_warning() {
        let m = generate_random_mask(64, 0.5, 4.0, 1).unwrap();
        assert!(m.warning.is_some());
        assert_eq!(m.sampled_count(), 32);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(generate_random_mask(63, 0.08, 4.0, 0).is_err());
        assert!(generate_random_mask(2, 0.08, 4.0, 0).is_err());
        assert!(generate_random_mask(64, 0.0, 4.0, 0).is_err());
        assert!(generate_random_mask(64, 0.08, 0.5, 0).is_err());
    }

    #[test]
    fn same_seed_same_mask() {
        let a = generate_random_mask(128, 0.08, 4.0, 99).unwrap();
        let b = generate_random_mask(128, 0.08, 4.0, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mask_length_mismatch_fails() {
        let k = ComplexImage::<f32>::zeros(4, 8, Domain::KSpace);
        assert!(apply_mask(&k, &Mask::full(6)).is_err());
    }

    #[test]
    fn center_only_mask_keeps_center_columns() {
        let mut lines = vec![false; 8];
        lines[3] = true;
        lines[4] = true;
        let mask = Mask::from_lines(lines).unwrap();
        let k = ComplexImage::new(2, 8, vec![1.0f32; 16], vec![2.0; 16], Domain::KSpace).unwrap();
        let out = apply_mask(&k, &mask).unwrap();
        for idx in 0..16 {
            let keep = idx % 8 == 3 || idx % 8 == 4;
            assert_eq!(out.re[idx] != 0.0, keep);
            assert_eq!(out.im[idx] != 0.0, keep);
        }
    }
}
