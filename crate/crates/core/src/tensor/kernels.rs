//! Raw-buffer kernels behind the graph ops. Layout is NCHW, row-major.
//!
//! Per-sample work runs on the rayon pool; reductions over the batch (weight
//! gradients) are summed in sample order so results do not depend on the
//! thread count.

use rayon::prelude::*;

use super::Real;

#[derive(Clone, Copy, Debug)]
pub(crate) struct Dims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn from_shape(shape: &[usize]) -> Self {
        Self {
            n: shape[0],
            c: shape[1],
            h: shape[2],
            w: shape[3],
        }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn sample(&self) -> usize {
        self.c * self.h * self.w
    }
}

/// Unfolds one sample into a `[cin*k*k, h*w]` patch matrix (zero padding k/2).
fn im2col<F: Real>(x: &[F], cin: usize, h: usize, w: usize, k: usize, cols: &mut [F]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..cin {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(F::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (xx, d) in dst.iter_mut().enumerate() {
                        let sx = xx as isize + dx;
                        *d = if sx < 0 || sx >= w as isize {
                            F::zero()
                        } else {
                            src[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the image.
fn col2im<F: Real>(cols: &[F], cin: usize, h: usize, w: usize, k: usize, gx: &mut [F]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    gx.fill(F::zero());
    for ci in 0..cin {
        let plane = &mut gx[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    for (xx, &v) in src.iter().enumerate() {
                        let sx = xx as isize + dx;
                        if sx >= 0 && sx < w as isize {
                            dst[sx as usize] = dst[sx as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

/// Same-size convolution with a `k×k` kernel (`k` odd), stride 1, no bias.
/// `weight` is `[cout, cin, k, k]`.
pub(crate) fn conv2d_forward<F: Real>(x: &[F], d: Dims, weight: &[F], cout: usize, k: usize) -> Vec<F> {
    let hw = d.plane();
    let patch = d.c * k * k;
    let mut out = vec![F::zero(); d.n * cout * hw];
    out.par_chunks_mut(cout * hw)
        .zip(x.par_chunks(d.sample()))
        .for_each(|(y, xs)| {
            let owned;
            let cols: &[F] = if k == 1 {
                xs
            } else {
                let mut buf = vec![F::zero(); patch * hw];
                im2col(xs, d.c, d.h, d.w, k, &mut buf);
                owned = buf;
                &owned
            };
            F::gemm(
                cout,
                patch,
                hw,
                F::one(),
                weight,
                patch as isize,
                1,
                cols,
                hw as isize,
                1,
                F::zero(),
                y,
                hw as isize,
                1,
            );
        });
    out
}

/// Returns `(grad_x, grad_weight)`.
pub(crate) fn conv2d_backward<F: Real>(
    x: &[F],
    d: Dims,
    weight: &[F],
    cout: usize,
    k: usize,
    gy: &[F],
) -> (Vec<F>, Vec<F>) {
    let hw = d.plane();
    let patch = d.c * k * k;
    let mut gx = vec![F::zero(); x.len()];
    let per_sample_gw: Vec<Vec<F>> = gx
        .par_chunks_mut(d.sample())
        .zip(x.par_chunks(d.sample()))
        .zip(gy.par_chunks(cout * hw))
        .map(|((gxs, xs), gys)| {
            let mut gw = vec![F::zero(); cout * patch];
            if k == 1 {
                // gw = gy * x^T ; gx = w^T * gy
                F::gemm(cout, hw, patch, F::one(), gys, hw as isize, 1, xs, 1, hw as isize, F::zero(), &mut gw, patch as isize, 1);
                F::gemm(patch, cout, hw, F::one(), weight, 1, patch as isize, gys, hw as isize, 1, F::zero(), gxs, hw as isize, 1);
            } else {
                let mut cols = vec![F::zero(); patch * hw];
                im2col(xs, d.c, d.h, d.w, k, &mut cols);
                F::gemm(cout, hw, patch, F::one(), gys, hw as isize, 1, &cols, 1, hw as isize, F::zero(), &mut gw, patch as isize, 1);
                F::gemm(patch, cout, hw, F::one(), weight, 1, patch as isize, gys, hw as isize, 1, F::zero(), &mut cols, hw as isize, 1);
                col2im(&cols, d.c, d.h, d.w, k, gxs);
            }
            gw
        })
        .collect();
    (gx, sum_in_order(per_sample_gw, cout * patch))
}

/// 2×2, stride-2 transposed convolution, no bias. `weight` is `[cin, cout, 2, 2]`.
pub(crate) fn conv_transpose_forward<F: Real>(x: &[F], d: Dims, weight: &[F], cout: usize) -> Vec<F> {
    let hw = d.plane();
    let (oh, ow) = (2 * d.h, 2 * d.w);
    let rows = cout * 4;
    let mut out = vec![F::zero(); d.n * cout * oh * ow];
    out.par_chunks_mut(cout * oh * ow)
        .zip(x.par_chunks(d.sample()))
        .for_each(|(y, xs)| {
            let mut tmp = vec![F::zero(); rows * hw];
            // tmp[(co,a,b), p] = sum_ci w[ci, (co,a,b)] * x[ci, p]
            F::gemm(rows, d.c, hw, F::one(), weight, 1, rows as isize, xs, hw as isize, 1, F::zero(), &mut tmp, hw as isize, 1);
            for co in 0..cout {
                for a in 0..2 {
                    for b in 0..2 {
                        let src = &tmp[(co * 4 + a * 2 + b) * hw..][..hw];
                        for i in 0..d.h {
                            for j in 0..d.w {
                                y[co * oh * ow + (2 * i + a) * ow + 2 * j + b] = src[i * d.w + j];
                            }
                        }
                    }
                }
            }
        });
    out
}

pub(crate) fn conv_transpose_backward<F: Real>(
    x: &[F],
    d: Dims,
    weight: &[F],
    cout: usize,
    gy: &[F],
) -> (Vec<F>, Vec<F>) {
    let hw = d.plane();
    let (oh, ow) = (2 * d.h, 2 * d.w);
    let rows = cout * 4;
    let mut gx = vec![F::zero(); x.len()];
    let per_sample_gw: Vec<Vec<F>> = gx
        .par_chunks_mut(d.sample())
        .zip(x.par_chunks(d.sample()))
        .zip(gy.par_chunks(cout * oh * ow))
        .map(|((gxs, xs), gys)| {
            let mut gtmp = vec![F::zero(); rows * hw];
            for co in 0..cout {
                for a in 0..2 {
                    for b in 0..2 {
                        let dst = &mut gtmp[(co * 4 + a * 2 + b) * hw..][..hw];
                        for i in 0..d.h {
                            for j in 0..d.w {
                                dst[i * d.w + j] = gys[co * oh * ow + (2 * i + a) * ow + 2 * j + b];
                            }
                        }
                    }
                }
            }
            F::gemm(d.c, rows, hw, F::one(), weight, rows as isize, 1, &gtmp, hw as isize, 1, F::zero(), gxs, hw as isize, 1);
            let mut gw = vec![F::zero(); d.c * rows];
            F::gemm(d.c, hw, rows, F::one(), xs, hw as isize, 1, &gtmp, 1, hw as isize, F::zero(), &mut gw, rows as isize, 1);
            gw
        })
        .collect();
    (gx, sum_in_order(per_sample_gw, d.c * rows))
}

fn sum_in_order<F: Real>(parts: Vec<Vec<F>>, len: usize) -> Vec<F> {
    let mut acc = vec![F::zero(); len];
    for part in parts {
        acc.iter_mut().zip(&part).for_each(|(a, &b)| *a = *a + b);
    }
    acc
}

/// 2×2 max pool. Returns the pooled values and, per output, the flat input
/// index that won (first in row-major order on ties).
pub(crate) fn maxpool_forward<F: Real>(x: &[F], d: Dims) -> (Vec<F>, Vec<usize>) {
    let (oh, ow) = (d.h / 2, d.w / 2);
    let planes = d.n * d.c;
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * d.plane();
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + 2 * i * d.w + 2 * j;
                for (a, b) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * i + a) * d.w + 2 * j + b;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

pub(crate) fn avgpool_forward<F: Real>(x: &[F], d: Dims) -> Vec<F> {
    let (oh, ow) = (d.h / 2, d.w / 2);
    let quarter = F::of(0.25);
    let mut out = Vec::with_capacity(d.n * d.c * oh * ow);
    for p in 0..d.n * d.c {
        let base = p * d.plane();
        for i in 0..oh {
            for j in 0..ow {
                let at = |a: usize, b: usize| x[base + (2 * i + a) * d.w + 2 * j + b];
                out.push((at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) * quarter);
            }
        }
    }
    out
}

pub(crate) fn avgpool_backward<F: Real>(gy: &[F], d: Dims) -> Vec<F> {
    let (oh, ow) = (d.h / 2, d.w / 2);
    let quarter = F::of(0.25);
    let mut gx = vec![F::zero(); d.n * d.sample()];
    for p in 0..d.n * d.c {
        let base = p * d.plane();
        for i in 0..oh {
            for j in 0..ow {
                let g = gy[p * oh * ow + i * ow + j] * quarter;
                for (a, b) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    gx[base + (2 * i + a) * d.w + 2 * j + b] = g;
                }
            }
        }
    }
    gx
}
