use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{fft2c, ComplexImage, Domain};

/// Parameters of the synthetic ellipse phantom generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub size: usize,
    pub min_ellipses: usize,
    pub max_ellipses: usize,
    /// Magnitude range of ellipse intensities.
    pub intensity: (f64, f64),
    /// Number of sinusoidal components in the smooth phase map.
    pub phase_components: usize,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            size: 64,
            min_ellipses: 5,
            max_ellipses: 12,
            intensity: (0.0, 1.0),
            phase_components: 3,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn new(size: usize, seed: u64) -> Self {
        Self {
            size,
            seed,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.size < 8 || self.size % 2 != 0 {
            return Err(Error::invalid(format!("phantom size must be even and at least 8, got {}", self.size)));
        }
        if self.min_ellipses == 0 || self.min_ellipses > self.max_ellipses {
            return Err(Error::invalid(format!(
                "ellipse count range {}..={} is empty",
                self.min_ellipses, self.max_ellipses
            )));
        }
        let (lo, hi) = self.intensity;
        if !(0.0 <= lo && lo < hi && hi.is_finite()) {
            return Err(Error::invalid(format!("intensity range ({lo}, {hi}) is invalid")));
        }
        Ok(())
    }
}

/// A ground-truth complex image and its fully sampled k-space.
#[derive(Clone, Debug)]
pub struct PhantomSample {
    pub image: ComplexImage<f32>,
    pub kspace: ComplexImage<f32>,
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    value: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

fn draw_ellipses(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Vec<Ellipse> {
    let (lo, hi) = spec.intensity;
    let n = rng.random_range(spec.min_ellipses..=spec.max_ellipses);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        let (cx, cy, a, b, value) = if i == 0 {
            // outer body, bright enough to dominate the background
            (
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
                rng.random_range(0.6..0.85),
                rng.random_range(0.7..0.9),
                rng.random_range(lo + 0.5 * (hi - lo)..=hi),
            )
        } else {
            (
                rng.random_range(-0.45..0.45),
                rng.random_range(-0.45..0.45),
                rng.random_range(0.05..0.3),
                rng.random_range(0.05..0.3),
                rng.random_range(lo..=hi),
            )
        };
        out.push(Ellipse {
            cx,
            cy,
            a,
            b,
            cos: theta.cos(),
            sin: theta.sin(),
            value,
        });
    }
    out
}

fn phantom(spec: &PhantomSpec, index: u64) -> ComplexImage<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index);
    let ellipses = draw_ellipses(spec, &mut rng);
    let phase: Vec<[f64; 4]> = (0..spec.phase_components)
        .map(|_| {
            [
                rng.random_range(0.0..std::f64::consts::FRAC_PI_4),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.0..std::f64::consts::TAU),
            ]
        })
        .collect();
    let n = spec.size;
    let mut img = ComplexImage::zeros(n, n, Domain::Image);
    for r in 0..n {
        let y = 2.0 * (r as f64 + 0.5) / n as f64 - 1.0;
        for c in 0..n {
            let x = 2.0 * (c as f64 + 0.5) / n as f64 - 1.0;
            // painter's order: later ellipses overwrite earlier ones
            let mag = ellipses
                .iter()
                .rev()
                .find(|e| e.contains(x, y))
                .map_or(0.0, |e| e.value);
            let phi: f64 = phase
                .iter()
                .map(|[amp, fx, fy, off]| amp * (std::f64::consts::PI * (fx * x + fy * y) + off).sin())
                .sum();
            img.re[r * n + c] = mag * phi.cos();
            img.im[r * n + c] = mag * phi.sin();
        }
    }
    img
}

/// `count` phantoms. Slice `i` depends only on `(spec, i)`, so any prefix of a
/// larger dataset equals the smaller dataset.
pub fn make_phantom_dataset(spec: &PhantomSpec, count: usize) -> Result<Vec<PhantomSample>> {
    spec.validate()?;
    Ok((0..count as u64)
        .map(|i| {
            let image = phantom(spec, i);
            let kspace = fft2c(&image);
            PhantomSample {
                image: image.cast(),
                kspace: kspace.cast(),
            }
        })
        .collect())
}
