use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Graph, ParamKind, ParamStore, Real, Tensor, Var};

/// Parameter initialiser: Kaiming-style uniform weights scaled by fan-in,
/// drawn in construction order from a seeded ChaCha8 stream.
pub struct Init<'a, F> {
    pub store: &'a mut ParamStore<F>,
    rng: ChaCha8Rng,
    gain_sq: f64,
}

impl<'a, F: Real> Init<'a, F> {
    pub fn new(store: &'a mut ParamStore<F>, seed: u64, leaky_slope: f64) -> Self {
        Self {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
            gain_sq: 2.0 / (1.0 + leaky_slope * leaky_slope),
        }
    }

    fn uniform(&mut self, shape: &[usize], fan_in: usize) -> Tensor<F> {
        let bound = (3.0 * self.gain_sq / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| F::of(self.rng.random_range(-bound..bound)))
            .collect();
        Tensor::new(shape, data).expect("shape matches")
    }

    /// `[cout, cin, k, k]` convolution weight.
    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> Result<()> {
        let t = self.uniform(&[cout, cin, k, k], cin * k * k);
        self.store.insert(name, ParamKind::Conv, t)
    }

    /// `[cin, cout, 2, 2]` transposed-convolution weight.
    pub fn conv_transpose(&mut self, name: &str, cin: usize, cout: usize) -> Result<()> {
        let t = self.uniform(&[cin, cout, 2, 2], cin);
        self.store.insert(name, ParamKind::ConvTranspose, t)
    }

    pub fn linear(&mut self, prefix: &str, din: usize, dout: usize, zero: bool) -> Result<()> {
        let (w, b) = if zero {
            (Tensor::zeros(&[dout, din]), Tensor::zeros(&[dout]))
        } else {
            (self.uniform(&[dout, din], din), self.uniform(&[dout], din))
        };
        self.store.insert(format!("{prefix}.weight"), ParamKind::Attention, w)?;
        self.store.insert(format!("{prefix}.bias"), ParamKind::Attention, b)
    }

    pub fn scalar(&mut self, name: &str, value: f64) -> Result<()> {
        self.store.insert(name, ParamKind::Scalar, Tensor::scalar(F::of(value)))
    }

    /// Squeeze-and-excitation gate over `channels`; the second layer starts
    /// at zero so the gate is a uniform 0.5 scaling.
    pub fn se(&mut self, prefix: &str, channels: usize, reduction: usize) -> Result<()> {
        let hidden = se_hidden(channels, reduction);
        self.linear(&format!("{prefix}.fc1"), channels, hidden, false)?;
        self.linear(&format!("{prefix}.fc2"), hidden, channels, true)
    }
}

pub(crate) fn se_hidden(channels: usize, reduction: usize) -> usize {
    (channels / reduction.max(1)).max(1)
}

pub(crate) fn conv<F: Real>(g: &mut Graph<F>, store: &ParamStore<F>, name: &str, x: Var) -> Result<Var> {
    let w = g.param(store, name)?;
    g.conv2d(x, w)
}

pub(crate) fn conv_act<F: Real>(
    g: &mut Graph<F>,
    store: &ParamStore<F>,
    name: &str,
    x: Var,
    slope: F,
) -> Result<Var> {
    let y = conv(g, store, name, x)?;
    Ok(g.leaky_relu(y, slope))
}

pub(crate) fn up<F: Real>(g: &mut Graph<F>, store: &ParamStore<F>, name: &str, x: Var) -> Result<Var> {
    let w = g.param(store, name)?;
    g.conv_transpose2d(x, w)
}

fn linear<F: Real>(g: &mut Graph<F>, store: &ParamStore<F>, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(store, &format!("{prefix}.weight"))?;
    let b = g.param(store, &format!("{prefix}.bias"))?;
    g.linear(x, w, b)
}

/// Channel attention: global average pool, `C -> C/r` linear, leaky ReLU,
/// `C/r -> C` linear, sigmoid, then per-channel scaling of `x`.
pub fn se_attention<F: Real>(
    g: &mut Graph<F>,
    store: &ParamStore<F>,
    prefix: &str,
    x: Var,
    slope: F,
) -> Result<Var> {
    let squeezed = g.global_avg_pool(x)?;
    let hidden = linear(g, store, &format!("{prefix}.fc1"), squeezed)?;
    let hidden = g.leaky_relu(hidden, slope);
    let gate = linear(g, store, &format!("{prefix}.fc2"), hidden)?;
    let gate = g.sigmoid(gate);
    g.scale_channels(x, gate)
}
