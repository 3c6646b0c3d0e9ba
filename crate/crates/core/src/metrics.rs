//! Image quality metrics on magnitude images: SSIM, PSNR and NMSE.
//!
//! SSIM follows the fastMRI evaluation setup: a 7×7 uniform window,
//! `k1 = 0.01`, `k2 = 0.03`, sample-covariance normalisation `n/(n-1)`, and
//! the mean taken over valid (fully inside) windows only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Real;

pub const SSIM_WINDOW: usize = 7;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Sum over each `k×k` window fully inside the image. Output is
/// `(h-k+1)×(w-k+1)`.
fn box_sum_valid(src: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        let mut acc: f64 = line[..k].iter().sum();
        rows[y * ow] = acc;
        for x in 1..ow {
            acc += line[x + k - 1] - line[x - 1];
            rows[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0; oh * ow];
    for x in 0..ow {
        let mut acc: f64 = (0..k).map(|y| rows[y * ow + x]).sum();
        out[x] = acc;
        for y in 1..oh {
            acc += rows[(y + k - 1) * ow + x] - rows[(y - 1) * ow + x];
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Adjoint of [`box_sum_valid`]: each pixel receives the sum of the window
/// values whose window covers it.
fn box_spread(src: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut cols = vec![0.0; h * ow];
    for x in 0..ow {
        for y in 0..oh {
            let v = src[y * ow + x];
            for dy in 0..k {
                cols[(y + dy) * ow + x] += v;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..ow {
            let v = cols[y * ow + x];
            for dx in 0..k {
                out[y * w + x + dx] += v;
            }
        }
    }
    out
}

struct WindowStats {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    var_x: Vec<f64>,
    var_y: Vec<f64>,
    cov: Vec<f64>,
}

fn window_stats(x: &[f64], y: &[f64], h: usize, w: usize) -> WindowStats {
    let k = SSIM_WINDOW;
    let n = (k * k) as f64;
    let cov_norm = n / (n - 1.0);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mu_x: Vec<f64> = box_sum_valid(x, h, w, k).into_iter().map(|s| s / n).collect();
    let mu_y: Vec<f64> = box_sum_valid(y, h, w, k).into_iter().map(|s| s / n).collect();
    let second = |buf: &[f64], ma: &[f64], mb: &[f64]| -> Vec<f64> {
        box_sum_valid(buf, h, w, k)
            .into_iter()
            .zip(ma.iter().zip(mb))
            .map(|(s, (a, b))| cov_norm * (s / n - a * b))
            .collect()
    };
    let var_x = second(&xx, &mu_x, &mu_x);
    let var_y = second(&yy, &mu_y, &mu_y);
    let cov = second(&xy, &mu_x, &mu_y);
    WindowStats {
        mu_x,
        mu_y,
        var_x,
        var_y,
        cov,
    }
}

fn check_ssim_inputs(x_len: usize, y_len: usize, h: usize, w: usize, data_range: f64) -> Result<()> {
    if x_len != h * w || y_len != h * w {
        return Err(Error::shape(
            "ssim",
            "x/y",
            format!("{h}x{w} images"),
            &[x_len, y_len],
        ));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "ssim: {SSIM_WINDOW}x{SSIM_WINDOW} window does not fit a {h}x{w} image"
        )));
    }
    if !(data_range > 0.0) {
        return Err(Error::invalid(format!("ssim: data_range must be > 0, got {data_range}")));
    }
    Ok(())
}

fn to_f64<F: Real>(v: &[F]) -> Vec<f64> {
    v.iter().map(|a| a.as_f64()).collect()
}

/// Mean SSIM of `x` against the reference `y`, both `h×w` row-major.
pub fn ssim<F: Real>(x: &[F], y: &[F], h: usize, w: usize, data_range: F) -> Result<F> {
    let dr = data_range.as_f64();
    check_ssim_inputs(x.len(), y.len(), h, w, dr)?;
    let st = window_stats(&to_f64(x), &to_f64(y), h, w);
    let c1 = (SSIM_K1 * dr).powi(2);
    let c2 = (SSIM_K2 * dr).powi(2);
    let mut total = 0.0;
    for i in 0..st.mu_x.len() {
        let (mx, my) = (st.mu_x[i], st.mu_y[i]);
        let num = (2.0 * mx * my + c1) * (2.0 * st.cov[i] + c2);
        let den = (mx * mx + my * my + c1) * (st.var_x[i] + st.var_y[i] + c2);
        total += num / den;
    }
    Ok(F::of(total / st.mu_x.len() as f64))
}

/// SSIM and its gradient with respect to `x` (the reference `y` is held fixed).
pub fn ssim_with_grad<F: Real>(x: &[F], y: &[F], h: usize, w: usize, data_range: F) -> Result<(F, Vec<F>)> {
    let dr = data_range.as_f64();
    check_ssim_inputs(x.len(), y.len(), h, w, dr)?;
    let xs = to_f64(x);
    let ys = to_f64(y);
    let st = window_stats(&xs, &ys, h, w);
    let k = SSIM_WINDOW;
    let n = (k * k) as f64;
    let cov_norm = n / (n - 1.0);
    let c1 = (SSIM_K1 * dr).powi(2);
    let c2 = (SSIM_K2 * dr).powi(2);
    let m = st.mu_x.len();
    let mut alpha = vec![0.0; m];
    let mut beta = vec![0.0; m];
    let mut gamma = vec![0.0; m];
    let mut total = 0.0;
    for i in 0..m {
        let (mx, my) = (st.mu_x[i], st.mu_y[i]);
        let a1 = 2.0 * mx * my + c1;
        let a2 = 2.0 * st.cov[i] + c2;
        let b1 = mx * mx + my * my + c1;
        let b2 = st.var_x[i] + st.var_y[i] + c2;
        let s = (a1 * a2) / (b1 * b2);
        total += s;
        let ds_dmu = s * (2.0 * my / a1 - 2.0 * mx / b1);
        let ds_dvar = -s / b2;
        let ds_dcov = 2.0 * s / a2;
        alpha[i] = ds_dmu - 2.0 * cov_norm * mx * ds_dvar - cov_norm * my * ds_dcov;
        beta[i] = cov_norm * ds_dvar;
        gamma[i] = cov_norm * ds_dcov;
    }
    let alpha = box_spread(&alpha, h, w, k);
    let beta = box_spread(&beta, h, w, k);
    let gamma = box_spread(&gamma, h, w, k);
    let scale = 1.0 / (n * m as f64);
    let grad = (0..h * w)
        .map(|p| F::of(scale * (alpha[p] + 2.0 * xs[p] * beta[p] + ys[p] * gamma[p])))
        .collect();
    Ok((F::of(total / m as f64), grad))
}

/// Peak signal-to-noise ratio in dB. Identical inputs give `+inf`.
pub fn psnr<F: Real>(x: &[F], y: &[F], data_range: F) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::shape("psnr", "x/y", "equal non-empty lengths", &[x.len(), y.len()]));
    }
    let dr = data_range.as_f64();
    if !(dr > 0.0) {
        return Err(Error::invalid(format!("psnr: data_range must be > 0, got {dr}")));
    }
    let mse = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
        .sum::<f64>()
        / x.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * dr.log10() - 10.0 * mse.log10())
}

/// `||x - y||^2 / ||y||^2`.
pub fn nmse<F: Real>(x: &[F], y: &[F]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape("nmse", "x/y", "equal lengths", &[x.len(), y.len()]));
    }
    let ref_energy: f64 = y.iter().map(|v| v.as_f64().powi(2)).sum();
    if ref_energy == 0.0 {
        return Err(Error::invalid("nmse: reference image is all zeros"));
    }
    let err: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
        .sum();
    Ok(err / ref_energy)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub nmse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Metrics of one reconstructed magnitude slice against its reference, with
/// `data_range` taken as the reference maximum.
pub fn slice_metrics<F: Real>(recon: &[F], reference: &[F], h: usize, w: usize) -> Result<SliceMetrics> {
    let dr = reference.iter().fold(F::zero(), |m, &v| m.max(v));
    if !(dr > F::zero()) {
        return Err(Error::invalid("reference slice has zero maximum"));
    }
    Ok(SliceMetrics {
        nmse: nmse(recon, reference)?,
        psnr: psnr(recon, reference, dr)?,
        ssim: ssim(recon, reference, h, w, dr)?.as_f64(),
    })
}

/// Per-slice metrics averaged over a set of slices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub nmse: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub n_slices: usize,
}

impl MetricReport {
    pub fn from_slices(slices: &[SliceMetrics]) -> Result<Self> {
        if slices.is_empty() {
            return Err(Error::invalid("no slices to average"));
        }
        let n = slices.len() as f64;
        Ok(Self {
            nmse: slices.iter().map(|s| s.nmse).sum::<f64>() / n,
            psnr: slices.iter().map(|s| s.psnr).sum::<f64>() / n,
            ssim: slices.iter().map(|s| s.ssim).sum::<f64>() / n,
            n_slices: slices.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_images_score_one() {
        let x: Vec<f64> = (0..100).map(|i| ((i * 37) % 17) as f64 / 17.0).collect();
        assert_eq!(ssim(&x, &x, 10, 10, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn constant_images_match_closed_form() {
        let a = vec![1.0f64; 64];
        let b = vec![0.5f64; 64];
        let c1 = 1e-4;
        let expected = (2.0 * 0.5 + c1) / (1.25 + c1);
        let got = ssim(&a, &b, 8, 8, 1.0).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        assert!((got - 0.800016).abs() < 1e-6);
    }

    #[test]
    fn window_larger_than_image_fails() {
        let x = vec![0.0f64; 36];
        assert!(ssim(&x, &x, 6, 6, 1.0).is_err());
    }

    #[test]
    fn psnr_constant_offset() {
        let x = vec![0.3f64; 50];
        let y: Vec<f64> = x.iter().map(|v| v + 0.1).collect();
        assert!((psnr(&x, &y, 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&x, &x, 1.0).unwrap(), f64::INFINITY);
        assert!(psnr(&x, &y, 0.0).is_err());
    }

    #[test]
    fn nmse_identities() {
        let y: Vec<f64> = (1..=20).map(|i| i as f64 * 0.1).collect();
        assert_eq!(nmse(&y, &y).unwrap(), 0.0);
        assert_eq!(nmse(&vec![0.0; 20], &y).unwrap(), 1.0);
        let x: Vec<f64> = y.iter().map(|v| 1.1 * v).collect();
        assert!((nmse(&x, &y).unwrap() - 0.01).abs() < 1e-12);
        assert!(nmse(&y, &vec![0.0; 20]).is_err());
    }

    #[test]
    fn spread_is_adjoint_of_valid_sum() {
        let (h, w, k) = (9, 11, 3);
        let a: Vec<f64> = (0..h * w).map(|i| (i as f64 * 0.7).sin()).collect();
        let b: Vec<f64> = (0..(h - k + 1) * (w - k + 1)).map(|i| (i as f64 * 0.3).cos()).collect();
        let lhs: f64 = box_sum_valid(&a, h, w, k).iter().zip(&b).map(|(p, q)| p * q).sum();
        let rhs: f64 = a.iter().zip(box_spread(&b, h, w, k)).map(|(p, q)| p * q).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
