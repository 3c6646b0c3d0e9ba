//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] is rebuilt for every forward pass. Nodes are appended in
//! evaluation order, so reverse insertion order is a valid reverse
//! topological order for [`Graph::backward`].

use std::collections::HashMap;

use rustfft::FftDirection;

use super::kernels::{self, Dims};
use super::{ParamStore, Real, Tensor};
use crate::error::{Error, Result};
use crate::fourier;
use crate::metrics;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

/// Direction of the centered unitary transform applied to channel pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpectralDirection {
    /// Image domain to k-space (`fft2c`).
    Forward,
    /// K-space to image domain (`ifft2c`).
    Inverse,
}

impl SpectralDirection {
    fn fft(self) -> FftDirection {
        match self {
            SpectralDirection::Forward => FftDirection::Forward,
            SpectralDirection::Inverse => FftDirection::Inverse,
        }
    }

    fn adjoint(self) -> Self {
        match self {
            SpectralDirection::Forward => SpectralDirection::Inverse,
            SpectralDirection::Inverse => SpectralDirection::Forward,
        }
    }
}

enum Op<F> {
    Leaf,
    Conv2d { x: Var, w: Var, k: usize },
    ConvTranspose2d { x: Var, w: Var },
    MaxPool { x: Var, argmax: Vec<usize> },
    AvgPool { x: Var },
    LeakyRelu { x: Var, slope: F },
    Sigmoid { x: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Affine { x: Var, scale: F },
    ScaleChannels { x: Var, s: Var },
    Linear { x: Var, w: Var, b: Var },
    GlobalAvgPool { x: Var },
    Magnitude { x: Var },
    Spectral { x: Var, dir: SpectralDirection },
    Concat { a: Var, b: Var },
    SoftDc { k: Var, gamma: Var, raw: Vec<F>, mask: Vec<F>, correction: bool },
    Fuse { av: Var, ak: Var, mu: Var },
    Ssim { x: Var, target: Vec<F>, ranges: Vec<F> },
    Sum { x: Var },
}

impl<F> Op<F> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::MaxPool { .. } => "maxpool",
            Op::AvgPool { .. } => "avgpool",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Affine { .. } => "affine",
            Op::ScaleChannels { .. } => "scale_channels",
            Op::Linear { .. } => "linear",
            Op::GlobalAvgPool { .. } => "global_avg_pool",
            Op::Magnitude { .. } => "magnitude",
            Op::Spectral { .. } => "spectral",
            Op::Concat { .. } => "concat",
            Op::SoftDc { correction: false, .. } => "data_consistency",
            Op::SoftDc { correction: true, .. } => "dc_correction",
            Op::Fuse { .. } => "fuse",
            Op::Ssim { .. } => "ssim",
            Op::Sum { .. } => "sum",
        }
    }
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Denominator floor in the magnitude gradient `x / max(|x|, eps)`.
pub const MAGNITUDE_EPS: f64 = 1e-12;

/// Denominator guard for fusion, `|1 + mu| > FUSE_GUARD`.
pub const FUSE_GUARD: f64 = 1e-6;

pub struct Graph<F: Real> {
    nodes: Vec<Node<F>>,
    grads: Vec<Option<Vec<F>>>,
    params: HashMap<String, Var>,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn expect_rank(op: &'static str, operand: &'static str, shape: &[usize], rank: usize) -> Result<()> {
    if shape.len() != rank {
        let expected = match rank {
            4 => "[N, C, H, W]".to_string(),
            2 => "[N, C]".to_string(),
            r => format!("rank {r}"),
        };
        return Err(Error::shape(op, operand, expected, shape));
    }
    Ok(())
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: value.with_requires_grad(requires_grad),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Adds a leaf. Gradients are tracked iff `t.requires_grad()`.
    pub fn input(&mut self, t: Tensor<F>) -> Var {
        let rg = t.requires_grad();
        self.push(t, Op::Leaf, rg)
    }

    /// Adds a constant leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Binds a named parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<F>, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = store
            .get(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name:?}")))?
            .clone();
        let v = self.push(t, Op::Leaf, true);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// Routes later `param(_, name)` calls to an existing node, so a named
    /// parameter can be driven by an input (for gradient checks).
    pub fn bind_param(&mut self, name: &str, v: Var) {
        self.params.insert(name.to_string(), v);
    }

    /// `k×k` same-size convolution (k odd), stride 1, no bias.
    /// Weight layout `[Cout, Cin, k, k]`.
    pub fn conv2d(&mut self, x: Var, w: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        expect_rank("conv2d", "x", &xs, 4)?;
        if ws.len() != 4 || ws[1] != xs[1] || ws[2] != ws[3] || ws[2] % 2 == 0 {
            return Err(Error::shape(
                "conv2d",
                "weight",
                format!("[Cout, {}, k, k] with k odd", xs[1]),
                &ws,
            ));
        }
        let d = Dims::from_shape(&xs);
        let out = kernels::conv2d_forward(self.value(x).data(), d, self.value(w).data(), ws[0], ws[2]);
        let t = Tensor::new(&[d.n, ws[0], d.h, d.w], out)?;
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(t, Op::Conv2d { x, w, k: ws[2] }, rg))
    }

    /// 2×2 stride-2 transposed convolution, no bias. Weight layout `[Cin, Cout, 2, 2]`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        expect_rank("conv_transpose2d", "x", &xs, 4)?;
        if ws.len() != 4 || ws[0] != xs[1] || ws[2] != 2 || ws[3] != 2 {
            return Err(Error::shape(
                "conv_transpose2d",
                "weight",
                format!("[{}, Cout, 2, 2]", xs[1]),
                &ws,
            ));
        }
        let d = Dims::from_shape(&xs);
        let out = kernels::conv_transpose_forward(self.value(x).data(), d, self.value(w).data(), ws[1]);
        let t = Tensor::new(&[d.n, ws[1], 2 * d.h, 2 * d.w], out)?;
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(t, Op::ConvTranspose2d { x, w }, rg))
    }

    /// 2×2 stride-2 pooling. Both spatial extents must be even.
    pub fn pool(&mut self, x: Var, kind: PoolKind) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        expect_rank("pool", "x", &xs, 4)?;
        if xs[2] % 2 != 0 || xs[3] % 2 != 0 {
            return Err(Error::shape("pool", "x", "even spatial extents", &xs));
        }
        let d = Dims::from_shape(&xs);
        let shape = [d.n, d.c, d.h / 2, d.w / 2];
        let rg = self.rg(x);
        Ok(match kind {
            PoolKind::Max => {
                let (out, argmax) = kernels::maxpool_forward(self.value(x).data(), d);
                self.push(Tensor::new(&shape, out)?, Op::MaxPool { x, argmax }, rg)
            }
            PoolKind::Avg => {
                let out = kernels::avgpool_forward(self.value(x).data(), d);
                self.push(Tensor::new(&shape, out)?, Op::AvgPool { x }, rg)
            }
        })
    }

    fn map_unary(&mut self, x: Var, op: Op<F>, f: impl Fn(F) -> F) -> Var {
        let src = self.value(x);
        let out: Vec<F> = src.data().iter().map(|&v| f(v)).collect();
        let t = Tensor::new(src.shape(), out).expect("same shape");
        let rg = self.rg(x);
        self.push(t, op, rg)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: F) -> Var {
        self.map_unary(x, Op::LeakyRelu { x, slope }, |v| if v > F::zero() { v } else { v * slope })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map_unary(x, Op::Sigmoid { x }, |v| F::one() / (F::one() + (-v).exp()))
    }

    /// `scale * x`.
    pub fn scale(&mut self, x: Var, scale: F) -> Var {
        self.map_unary(x, Op::Affine { x, scale }, |v| v * scale)
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: F, shift: F) -> Var {
        self.map_unary(x, Op::Affine { x, scale }, |v| v * scale + shift)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                "rhs",
                format!("{:?} (shape of lhs)", self.shape(a)),
                self.shape(b),
            ));
        }
        Ok(())
    }

    /// Elementwise sum of two equally shaped tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out: Vec<F> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&p, &q)| p + q)
            .collect();
        let t = Tensor::new(self.shape(a), out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out: Vec<F> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&p, &q)| p * q)
            .collect();
        let t = Tensor::new(self.shape(a), out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul { a, b }, rg))
    }

    /// Multiplies every `[H, W]` plane of `x: [N, C, H, W]` by `s: [N, C]`.
    pub fn scale_channels(&mut self, x: Var, s: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        expect_rank("scale_channels", "x", &xs, 4)?;
        if self.shape(s) != [xs[0], xs[1]] {
            return Err(Error::shape(
                "scale_channels",
                "s",
                format!("[{}, {}]", xs[0], xs[1]),
                self.shape(s),
            ));
        }
        let hw = xs[2] * xs[3];
        let sv = self.value(s).data();
        let out: Vec<F> = self
            .value(x)
            .data()
            .chunks(hw)
            .zip(sv)
            .flat_map(|(plane, &f)| plane.iter().map(move |&v| v * f))
            .collect();
        let t = Tensor::new(&xs, out)?;
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(t, Op::ScaleChannels { x, s }, rg))
    }

    /// Fully connected layer: `x: [N, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        expect_rank("linear", "x", &xs, 2)?;
        if ws.len() != 2 || ws[1] != xs[1] {
            return Err(Error::shape("linear", "weight", format!("[out, {}]", xs[1]), &ws));
        }
        if self.shape(b) != [ws[0]] {
            return Err(Error::shape("linear", "bias", format!("[{}]", ws[0]), self.shape(b)));
        }
        let (n, din, dout) = (xs[0], xs[1], ws[0]);
        let mut out = Vec::with_capacity(n * dout);
        for _ in 0..n {
            out.extend_from_slice(self.value(b).data());
        }
        F::gemm(
            n,
            din,
            dout,
            F::one(),
            self.value(x).data(),
            din as isize,
            1,
            self.value(w).data(),
            1,
            din as isize,
            F::one(),
            &mut out,
            dout as isize,
            1,
        );
        let t = Tensor::new(&[n, dout], out)?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(t, Op::Linear { x, w, b }, rg))
    }

    /// Spatial mean: `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        expect_rank("global_avg_pool", "x", &xs, 4)?;
        let hw = xs[2] * xs[3];
        let inv = F::one() / F::of(hw as f64);
        let out: Vec<F> = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|p| p.iter().fold(F::zero(), |a, &v| a + v) * inv)
            .collect();
        let t = Tensor::new(&[xs[0], xs[1]], out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::GlobalAvgPool { x }, rg))
    }

    /// `[N, 2, H, W] -> [N, 1, H, W]`, `sqrt(re^2 + im^2)`.
    pub fn magnitude(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        expect_rank("magnitude", "x", &xs, 4)?;
        if xs[1] != 2 {
            return Err(Error::shape("magnitude", "x", "[N, 2, H, W]", &xs));
        }
        let hw = xs[2] * xs[3];
        let mut out = Vec::with_capacity(xs[0] * hw);
        for pair in self.value(x).data().chunks(2 * hw) {
            let (re, im) = pair.split_at(hw);
            out.extend(re.iter().zip(im).map(|(&r, &i)| (r * r + i * i).sqrt()));
        }
        let t = Tensor::new(&[xs[0], 1, xs[2], xs[3]], out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Magnitude { x }, rg))
    }

    /// Centered unitary 2D transform of each adjacent channel pair.
    pub fn spectral(&mut self, x: Var, dir: SpectralDirection) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        expect_rank("spectral", "x", &xs, 4)?;
        if xs[1] % 2 != 0 {
            return Err(Error::shape("spectral", "x", "an even channel count", &xs));
        }
        let mut out = self.value(x).data().to_vec();
        fourier::transform_channel_pairs(&mut out, xs[0], xs[1], xs[2], xs[3], dir.fft());
        let t = Tensor::new(&xs, out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Spectral { x, dir }, rg))
    }

    pub fn fft2c(&mut self, x: Var) -> Result<Var> {
        self.spectral(x, SpectralDirection::Forward)
    }

    pub fn ifft2c(&mut self, x: Var) -> Result<Var> {
        self.spectral(x, SpectralDirection::Inverse)
    }

    /// Channel concatenation `[N, Ca, H, W] ++ [N, Cb, H, W]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        expect_rank("concat", "a", &sa, 4)?;
        if sb.len() != 4 || sb[0] != sa[0] || sb[2] != sa[2] || sb[3] != sa[3] {
            return Err(Error::shape(
                "concat",
                "b",
                format!("[{}, C, {}, {}]", sa[0], sa[2], sa[3]),
                &sb,
            ));
        }
        let hw = sa[2] * sa[3];
        let (ca, cb) = (sa[1] * hw, sb[1] * hw);
        let mut out = Vec::with_capacity(sa[0] * (ca + cb));
        for n in 0..sa[0] {
            out.extend_from_slice(&self.value(a).data()[n * ca..(n + 1) * ca]);
            out.extend_from_slice(&self.value(b).data()[n * cb..(n + 1) * cb]);
        }
        let t = Tensor::new(&[sa[0], sa[1] + sb[1], sa[2], sa[3]], out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Concat { a, b }, rg))
    }

    /// Soft data consistency on k-space channel pairs `[N, 2, H, W]`.
    ///
    /// Sampled columns become `(1 - gamma) * k + gamma * raw`, unsampled
    /// columns pass through. `mask` holds one 0/1 entry per (sample, column),
    /// `[N * W]`.
    pub fn data_consistency(&mut self, k: Var, gamma: Var, raw: &[F], mask: &[F]) -> Result<Var> {
        self.soft_dc(k, gamma, raw, mask, false)
    }

    /// The change data consistency would make, `gamma * mask * (raw - k)`.
    /// Adding its inverse transform to an image applies DC in the image
    /// domain; at `gamma = 0` it is exactly zero.
    pub fn dc_correction(&mut self, k: Var, gamma: Var, raw: &[F], mask: &[F]) -> Result<Var> {
        self.soft_dc(k, gamma, raw, mask, true)
    }

    fn soft_dc(&mut self, k: Var, gamma: Var, raw: &[F], mask: &[F], correction: bool) -> Result<Var> {
        let ks = self.shape(k).to_vec();
        expect_rank("data_consistency", "k", &ks, 4)?;
        if ks[1] != 2 {
            return Err(Error::shape("data_consistency", "k", "[N, 2, H, W]", &ks));
        }
        if raw.len() != self.value(k).numel() {
            return Err(Error::shape("data_consistency", "raw", format!("{ks:?}"), &[raw.len()]));
        }
        if mask.len() != ks[0] * ks[3] {
            return Err(Error::shape(
                "data_consistency",
                "mask",
                format!("[{}] (N * W)", ks[0] * ks[3]),
                &[mask.len()],
            ));
        }
        if self.value(gamma).numel() != 1 {
            return Err(Error::shape("data_consistency", "gamma", "[1]", self.shape(gamma)));
        }
        let g = self.value(gamma).item();
        let (h, w) = (ks[2], ks[3]);
        let mut out = self.value(k).data().to_vec();
        for (idx, v) in out.iter_mut().enumerate() {
            let gm = g * mask[(idx / (2 * h * w)) * w + idx % w];
            *v = if correction {
                gm * (raw[idx] - *v)
            } else {
                (F::one() - gm) * *v + gm * raw[idx]
            };
        }
        let t = Tensor::new(&ks, out)?;
        let rg = self.rg(k) || self.rg(gamma);
        Ok(self.push(
            t,
            Op::SoftDc {
                k,
                gamma,
                raw: raw.to_vec(),
                mask: mask.to_vec(),
                correction,
            },
            rg,
        ))
    }

    /// `A = A_v / (1 + mu) + mu / (1 + mu) * A_k`.
    pub fn fuse(&mut self, av: Var, ak: Var, mu: Var) -> Result<Var> {
        self.same_shape("fuse", av, ak)?;
        if self.value(mu).numel() != 1 {
            return Err(Error::shape("fuse", "mu", "[1]", self.shape(mu)));
        }
        let (wv, wk) = fusion_weights(self.value(mu).item())?;
        let out: Vec<F> = self
            .value(av)
            .data()
            .iter()
            .zip(self.value(ak).data())
            .map(|(&a, &b)| wv * a + wk * b)
            .collect();
        let t = Tensor::new(self.shape(av), out)?;
        let rg = self.rg(av) || self.rg(ak) || self.rg(mu);
        Ok(self.push(t, Op::Fuse { av, ak, mu }, rg))
    }

    /// Mean over the batch of per-slice SSIM between `x: [N, 1, H, W]` and
    /// fixed targets, with one data range per slice.
    pub fn ssim(&mut self, x: Var, target: &[F], ranges: &[F]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        expect_rank("ssim", "x", &xs, 4)?;
        if xs[1] != 1 {
            return Err(Error::shape("ssim", "x", "[N, 1, H, W]", &xs));
        }
        if target.len() != self.value(x).numel() || ranges.len() != xs[0] {
            return Err(Error::shape(
                "ssim",
                "target",
                format!("{xs:?} plus {} ranges", xs[0]),
                &[target.len(), ranges.len()],
            ));
        }
        let hw = xs[2] * xs[3];
        let mut total = F::zero();
        for (n, &dr) in ranges.iter().enumerate() {
            let xv = &self.value(x).data()[n * hw..(n + 1) * hw];
            total = total + metrics::ssim(xv, &target[n * hw..(n + 1) * hw], xs[2], xs[3], dr)?;
        }
        let t = Tensor::scalar(total / F::of(xs[0] as f64));
        let rg = self.rg(x);
        Ok(self.push(
            t,
            Op::Ssim {
                x,
                target: target.to_vec(),
                ranges: ranges.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().fold(F::zero(), |a, &v| a + v);
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = F::of(self.value(x).numel() as f64);
        let s = self.sum(x);
        self.scale(s, F::one() / n)
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Reverse pass from a scalar. Fails on a non-scalar root or when a
    /// non-finite gradient appears; the error names the producing node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape("backward", "loss", "a scalar", self.shape(loss)));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Some(bad) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: format!("gradient of node #{i} ({}) at element {bad}", node.op.name()),
                });
            }
            for (input, gi) in self.local_grads(i, &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, &b)| *a = *a + b),
                    slot @ None => *slot = Some(gi),
                }
            }
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Adds the gradients of every bound parameter into the store.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore<F>) {
        for (name, &v) in &self.params {
            if let (Some(g), Some(t)) = (self.grad(v), store.get_mut(name)) {
                t.accumulate_grad(g);
            }
        }
    }

    fn local_grads(&self, i: usize, g: &[F]) -> Result<Vec<(Var, Vec<F>)>> {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.data();
        let shp = |v: Var| self.nodes[v.0].value.shape();
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d { x, w, k } => {
                let d = Dims::from_shape(shp(*x));
                let cout = shp(*w)[0];
                let (gx, gw) = kernels::conv2d_backward(val(*x), d, val(*w), cout, *k, g);
                vec![(*x, gx), (*w, gw)]
            }
            Op::ConvTranspose2d { x, w } => {
                let d = Dims::from_shape(shp(*x));
                let cout = shp(*w)[1];
                let (gx, gw) = kernels::conv_transpose_backward(val(*x), d, val(*w), cout, g);
                vec![(*x, gx), (*w, gw)]
            }
            Op::MaxPool { x, argmax } => {
                let mut gx = vec![F::zero(); val(*x).len()];
                for (&idx, &gv) in argmax.iter().zip(g) {
                    gx[idx] = gx[idx] + gv;
                }
                vec![(*x, gx)]
            }
            Op::AvgPool { x } => vec![(*x, kernels::avgpool_backward(g, Dims::from_shape(shp(*x))))],
            Op::LeakyRelu { x, slope } => {
                let gx = val(*x)
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > F::zero() { gv } else { gv * *slope })
                    .collect();
                vec![(*x, gx)]
            }
            Op::Sigmoid { x } => {
                let gx = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&s, &gv)| gv * s * (F::one() - s))
                    .collect();
                vec![(*x, gx)]
            }
            Op::Add { a, b } => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Mul { a, b } => {
                let ga = val(*b).iter().zip(g).map(|(&q, &gv)| q * gv).collect();
                let gb = val(*a).iter().zip(g).map(|(&p, &gv)| p * gv).collect();
                vec![(*a, ga), (*b, gb)]
            }
            Op::Affine { x, scale } => vec![(*x, g.iter().map(|&v| v * *scale).collect())],
            Op::ScaleChannels { x, s } => {
                let hw = shp(*x)[2] * shp(*x)[3];
                let sv = val(*s);
                let gx = g
                    .chunks(hw)
                    .zip(sv)
                    .flat_map(|(plane, &f)| plane.iter().map(move |&v| v * f))
                    .collect();
                let gs = g
                    .chunks(hw)
                    .zip(val(*x).chunks(hw))
                    .map(|(gp, xp)| gp.iter().zip(xp).fold(F::zero(), |a, (&p, &q)| a + p * q))
                    .collect();
                vec![(*x, gx), (*s, gs)]
            }
            Op::Linear { x, w, b } => {
                let (n, din) = (shp(*x)[0], shp(*x)[1]);
                let dout = shp(*w)[0];
                let mut gx = vec![F::zero(); n * din];
                F::gemm(n, dout, din, F::one(), g, dout as isize, 1, val(*w), din as isize, 1, F::zero(), &mut gx, din as isize, 1);
                let mut gw = vec![F::zero(); dout * din];
                F::gemm(dout, n, din, F::one(), g, 1, dout as isize, val(*x), din as isize, 1, F::zero(), &mut gw, din as isize, 1);
                let mut gb = vec![F::zero(); dout];
                for row in g.chunks(dout) {
                    gb.iter_mut().zip(row).for_each(|(a, &v)| *a = *a + v);
                }
                vec![(*x, gx), (*w, gw), (*b, gb)]
            }
            Op::GlobalAvgPool { x } => {
                let hw = shp(*x)[2] * shp(*x)[3];
                let inv = F::one() / F::of(hw as f64);
                let gx = g.iter().flat_map(|&v| std::iter::repeat_n(v * inv, hw)).collect();
                vec![(*x, gx)]
            }
            Op::Magnitude { x } => {
                let eps = F::of(MAGNITUDE_EPS);
                let s = shp(*x);
                let hw = s[2] * s[3];
                let mut gx = vec![F::zero(); val(*x).len()];
                for n in 0..s[0] {
                    for p in 0..hw {
                        let m = node.value.data()[n * hw + p];
                        let gv = g[n * hw + p] / m.max(eps);
                        gx[n * 2 * hw + p] = gv * val(*x)[n * 2 * hw + p];
                        gx[n * 2 * hw + hw + p] = gv * val(*x)[n * 2 * hw + hw + p];
                    }
                }
                vec![(*x, gx)]
            }
            Op::Spectral { x, dir } => {
                let s = shp(*x);
                let mut gx = g.to_vec();
                fourier::transform_channel_pairs(&mut gx, s[0], s[1], s[2], s[3], dir.adjoint().fft());
                vec![(*x, gx)]
            }
            Op::Concat { a, b } => {
                let (sa, sb) = (shp(*a), shp(*b));
                let hw = sa[2] * sa[3];
                let (ca, cb) = (sa[1] * hw, sb[1] * hw);
                let mut ga = Vec::with_capacity(val(*a).len());
                let mut gb = Vec::with_capacity(val(*b).len());
                for chunk in g.chunks(ca + cb) {
                    ga.extend_from_slice(&chunk[..ca]);
                    gb.extend_from_slice(&chunk[ca..]);
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::SoftDc {
                k,
                gamma,
                raw,
                mask,
                correction,
            } => {
                let s = shp(*k);
                let (h, w) = (s[2], s[3]);
                let gam = val(*gamma)[0];
                let kv = val(*k);
                let mut gk = Vec::with_capacity(kv.len());
                let mut gg = F::zero();
                for (idx, &gv) in g.iter().enumerate() {
                    let m = mask[(idx / (2 * h * w)) * w + idx % w];
                    gk.push(if *correction { -gv * gam * m } else { gv * (F::one() - gam * m) });
                    gg = gg + gv * m * (raw[idx] - kv[idx]);
                }
                vec![(*k, gk), (*gamma, vec![gg])]
            }
            Op::Fuse { av, ak, mu } => {
                let m = val(*mu)[0];
                let (wv, wk) = fusion_weights(m)?;
                let denom = (F::one() + m) * (F::one() + m);
                let gv: Vec<F> = g.iter().map(|&v| v * wv).collect();
                let gk: Vec<F> = g.iter().map(|&v| v * wk).collect();
                let gm = val(*av)
                    .iter()
                    .zip(val(*ak))
                    .zip(g)
                    .fold(F::zero(), |acc, ((&a, &b), &gv)| acc + gv * (b - a))
                    / denom;
                vec![(*av, gv), (*ak, gk), (*mu, vec![gm])]
            }
            Op::Ssim { x, target, ranges } => {
                let s = shp(*x);
                let hw = s[2] * s[3];
                let scale = g[0] / F::of(s[0] as f64);
                let mut gx = Vec::with_capacity(s[0] * hw);
                for (n, &dr) in ranges.iter().enumerate() {
                    let xv = &val(*x)[n * hw..(n + 1) * hw];
                    let (_, gs) = metrics::ssim_with_grad(xv, &target[n * hw..(n + 1) * hw], s[2], s[3], dr)?;
                    gx.extend(gs.into_iter().map(|v| v * scale));
                }
                vec![(*x, gx)]
            }
            Op::Sum { x } => vec![(*x, vec![g[0]; val(*x).len()])],
        })
    }
}

/// Weights `(1/(1+mu), mu/(1+mu))` of the image-domain fusion.
pub fn fusion_weights<F: Real>(mu: F) -> Result<(F, F)> {
    let denom = F::one() + mu;
    if !(denom.abs() > F::of(FUSE_GUARD)) {
        return Err(Error::invalid(format!(
            "degenerate fusion: |1 + mu| = {} <= {FUSE_GUARD}",
            denom.abs()
        )));
    }
    Ok((F::one() / denom, mu / denom))
}
