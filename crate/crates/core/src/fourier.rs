//! Centered orthonormal 2D Fourier transforms.
//!
//! `fft2c(x) = fftshift(fft2(ifftshift(x))) / sqrt(H*W)` and `ifft2c` is its
//! exact inverse, matching the fastMRI convention: the zero frequency sits at
//! `(H/2, W/2)` and both directions preserve energy.

use rustfft::num_complex::Complex;
use rustfft::FftDirection;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    Image,
    KSpace,
}

/// `H×P` complex field stored as separate real and imaginary planes.
/// Rows are frequency-encode samples, columns are phase-encode lines.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexImage<F> {
    height: usize,
    width: usize,
    pub re: Vec<F>,
    pub im: Vec<F>,
    pub domain: Domain,
}

impl<F: Real> ComplexImage<F> {
    pub fn new(height: usize, width: usize, re: Vec<F>, im: Vec<F>, domain: Domain) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("complex image extents must be positive"));
        }
        for (name, plane) in [("re", &re), ("im", &im)] {
            if plane.len() != height * width {
                return Err(Error::shape(
                    "complex_image",
                    name,
                    format!("{} elements", height * width),
                    &[plane.len()],
                ));
            }
        }
        Ok(Self {
            height,
            width,
            re,
            im,
            domain,
        })
    }

    pub fn zeros(height: usize, width: usize, domain: Domain) -> Self {
        Self {
            height,
            width,
            re: vec![F::zero(); height * width],
            im: vec![F::zero(); height * width],
            domain,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn magnitude(&self) -> Vec<F> {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(&r, &i)| (r * r + i * i).sqrt())
            .collect()
    }

    /// Sum of squared magnitudes, accumulated in 64-bit.
    pub fn energy(&self) -> f64 {
        self.re
            .iter()
            .chain(&self.im)
            .fold(0.0, |acc, &v| acc + v.as_f64() * v.as_f64())
    }

    pub fn scale(&mut self, s: F) {
        self.re.iter_mut().chain(self.im.iter_mut()).for_each(|v| *v = *v * s);
    }

    pub fn cast<G: Real>(&self) -> ComplexImage<G> {
        ComplexImage {
            height: self.height,
            width: self.width,
            re: self.re.iter().map(|v| G::of(v.as_f64())).collect(),
            im: self.im.iter().map(|v| G::of(v.as_f64())).collect(),
            domain: self.domain,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().chain(&self.im).all(|v| v.is_finite())
    }
}

pub fn fft2c<F: Real>(x: &ComplexImage<F>) -> ComplexImage<F> {
    let mut out = x.clone();
    transform_plane(&mut out.re, &mut out.im, x.height, x.width, FftDirection::Forward);
    out.domain = Domain::KSpace;
    out
}

pub fn ifft2c<F: Real>(k: &ComplexImage<F>) -> ComplexImage<F> {
    let mut out = k.clone();
    transform_plane(&mut out.re, &mut out.im, k.height, k.width, FftDirection::Inverse);
    out.domain = Domain::Image;
    out
}

/// Circularly shifts a row-major `h×w` buffer by `(dy, dx)`.
fn roll<T: Copy>(buf: &[T], h: usize, w: usize, dy: usize, dx: usize, out: &mut [T]) {
    for y in 0..h {
        let ty = (y + dy) % h;
        for x in 0..w {
            out[ty * w + (x + dx) % w] = buf[y * w + x];
        }
    }
}

/// In-place centered unitary transform of one complex plane.
pub(crate) fn transform_plane<F: Real>(re: &mut [F], im: &mut [F], h: usize, w: usize, dir: FftDirection) {
    let n = h * w;
    let mut a: Vec<Complex<F>> = re.iter().zip(im.iter()).map(|(&r, &i)| Complex::new(r, i)).collect();
    let mut b = vec![Complex::new(F::zero(), F::zero()); n];

    // ifftshift moves the center sample to index 0.
    roll(&a, h, w, h - h / 2, w - w / 2, &mut b);

    let (row_fft, col_fft) = {
        let mut planner = F::planner().lock().expect("fft planner poisoned");
        (planner.plan_fft(w, dir), planner.plan_fft(h, dir))
    };
    row_fft.process(&mut b);
    for y in 0..h {
        for x in 0..w {
            a[x * h + y] = b[y * w + x];
        }
    }
    col_fft.process(&mut a);
    for x in 0..w {
        for y in 0..h {
            b[y * w + x] = a[x * h + y];
        }
    }

    roll(&b, h, w, h / 2, w / 2, &mut a);
    let scale = F::one() / F::of(n as f64).sqrt();
    for ((r, i), c) in re.iter_mut().zip(im.iter_mut()).zip(&a) {
        *r = c.re * scale;
        *i = c.im * scale;
    }
}

/// Applies the centered transform to every adjacent channel pair
/// `(2k, 2k+1)` of an NCHW buffer, read as `(re, im)`.
pub(crate) fn transform_channel_pairs<F: Real>(
    data: &mut [F],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    dir: FftDirection,
) {
    use rayon::prelude::*;
    let hw = h * w;
    debug_assert_eq!(c % 2, 0);
    debug_assert_eq!(data.len(), n * c * hw);
    data.par_chunks_mut(2 * hw).for_each(|pair| {
        let (re, im) = pair.split_at_mut(hw);
        transform_plane(re, im, h, w, dir);
    });
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairedDirection {
    Forward,
    Inverse,
}

/// Channel-paired transform on a plain `[N, C, H, W]` buffer (C even).
pub fn channel_paired_transform<F: Real>(
    data: &[F],
    shape: &[usize],
    direction: PairedDirection,
) -> Result<Vec<F>> {
    if shape.len() != 4 {
        return Err(Error::shape("channel_paired_transform", "x", "[N, C, H, W]", shape));
    }
    if shape[1] % 2 != 0 {
        return Err(Error::shape(
            "channel_paired_transform",
            "x",
            "an even channel count",
            shape,
        ));
    }
    let mut out = data.to_vec();
    let dir = match direction {
        PairedDirection::Forward => FftDirection::Forward,
        PairedDirection::Inverse => FftDirection::Inverse,
    };
    transform_channel_pairs(&mut out, shape[0], shape[1], shape[2], shape[3], dir);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft_centered(x: &ComplexImage<f64>) -> ComplexImage<f64> {
        let (h, w) = (x.height(), x.width());
        let mut out = ComplexImage::zeros(h, w, Domain::KSpace);
        let (ch, cw) = ((h / 2) as f64, (w / 2) as f64);
        for u in 0..h {
            for v in 0..w {
                let (mut sr, mut si) = (0.0, 0.0);
                for y in 0..h {
                    for xx in 0..w {
                        let ph = -2.0
                            * std::f64::consts::PI
                            * ((u as f64 - ch) * (y as f64 - ch) / h as f64
                                + (v as f64 - cw) * (xx as f64 - cw) / w as f64);
                        let (c, s) = (ph.cos(), ph.sin());
                        let (a, b) = (x.re[y * w + xx], x.im[y * w + xx]);
                        sr += a * c - b * s;
                        si += a * s + b * c;
                    }
                }
                let norm = ((h * w) as f64).sqrt();
                out.re[u * w + v] = sr / norm;
                out.im[u * w + v] = si / norm;
            }
        }
        out
    }

    #[test]
    fn constant_image_maps_to_centered_dc() {
        let x = ComplexImage::new(2, 2, vec![1.0f64; 4], vec![0.0; 4], Domain::Image).unwrap();
        let k = fft2c(&x);
        // DC sits at (1, 1) for a 2×2 grid
        for idx in 0..4 {
            let expect = if idx == 3 { 2.0 } else { 0.0 };
            assert!((k.re[idx] - expect).abs() < 1e-12);
            assert!(k.im[idx].abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_of_centered_delta_is_constant() {
        let mut k = ComplexImage::<f64>::zeros(2, 2, Domain::KSpace);
        k.re[3] = 1.0;
        let x = ifft2c(&k);
        for v in &x.re {
            assert!((v - 0.5).abs() < 1e-12);
        }
        assert!(x.im.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn shifted_delta_gives_unit_plane_wave() {
        let mut x = ComplexImage::<f64>::zeros(8, 8, Domain::Image);
        x.re[2 * 8 + 5] = 8.0;
        let k = fft2c(&x);
        let oracle = naive_dft_centered(&x);
        for i in 0..64 {
            assert!((k.re[i] - oracle.re[i]).abs() < 1e-12);
            assert!((k.im[i] - oracle.im[i]).abs() < 1e-12);
            let mag = (k.re[i].powi(2) + k.im[i].powi(2)).sqrt();
            assert!((mag - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn odd_extents_round_trip() {
        let re: Vec<f64> = (0..15).map(|i| (i as f64 * 0.37).sin()).collect();
        let im: Vec<f64> = (0..15).map(|i| (i as f64 * 0.11).cos()).collect();
        let x = ComplexImage::new(3, 5, re, im, Domain::Image).unwrap();
        let back = ifft2c(&fft2c(&x));
        for i in 0..15 {
            assert!((back.re[i] - x.re[i]).abs() < 1e-12);
            assert!((back.im[i] - x.im[i]).abs() < 1e-12);
        }
        let oracle = naive_dft_centered(&x);
        let k = fft2c(&x);
        for i in 0..15 {
            assert!((k.re[i] - oracle.re[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn paired_transform_rejects_odd_channels() {
        let err = channel_paired_transform(&[0.0f32; 12], &[1, 3, 2, 2], PairedDirection::Forward);
        assert!(matches!(err, Err(Error::Shape { .. })));
    }

    #[test]
    fn two_channel_pairing_matches_complex_image() {
        let data: Vec<f64> = (0..32).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
        let out = channel_paired_transform(&data, &[1, 2, 4, 4], PairedDirection::Forward).unwrap();
        let img = ComplexImage::new(4, 4, data[..16].to_vec(), data[16..].to_vec(), Domain::Image).unwrap();
        let k = fft2c(&img);
        assert_eq!(&out[..16], &k.re[..]);
        assert_eq!(&out[16..], &k.im[..]);
    }
}
