//! Reference U-Net and its k-space variant, K-Net.
//!
//! Per level `i`: two 3×3 convs in the encoder; bottleneck
//! `2^{L-1}c -> 2^L c -> 2^L c`; decoder upsampling `2^i c -> 2^{i-1}c`,
//! concatenation with the encoder skip, then `2^i c -> 2^{i-1}c` and
//! `2^{i-1}c -> 2^{i-1}c`; final 1×1 `c -> 2`. No global residual.
//!
//! K-Net swaps max pooling for cross-domain max pooling and the
//! channel-halving transposed conv for a channel-preserving cross-domain
//! upsampling followed by a 1×1 channel-halving conv.

use super::cd::{cd_pool, cd_upsample};
use super::layers::{conv, conv_act, up, Init};
use crate::error::Result;
use crate::tensor::{Graph, ParamStore, PoolKind, Real, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UNetKind {
    /// Plain pooling and transposed-conv upsampling.
    Plain,
    /// Cross-domain pooling/upsampling (K-Net).
    CrossDomain,
}

#[derive(Clone, Debug)]
pub struct UNet {
    pub prefix: String,
    pub c: usize,
    pub levels: usize,
    pub leaky_slope: f64,
    pub kind: UNetKind,
}

impl UNet {
    pub fn new(prefix: impl Into<String>, c: usize, levels: usize, leaky_slope: f64, kind: UNetKind) -> Self {
        Self {
            prefix: prefix.into(),
            c,
            levels,
            leaky_slope,
            kind,
        }
    }

    pub fn knet(prefix: impl Into<String>, c: usize, levels: usize, leaky_slope: f64) -> Self {
        Self::new(prefix, c, levels, leaky_slope, UNetKind::CrossDomain)
    }

    fn name(&self, rest: &str) -> String {
        format!("{}.{rest}", self.prefix)
    }

    fn width(&self, i: usize) -> usize {
        self.c << (i - 1)
    }

    pub fn init<F: Real>(&self, init: &mut Init<'_, F>) -> Result<()> {
        let l = self.levels;
        for i in 1..=l {
            let cin = if i == 1 { 2 } else { self.width(i - 1) };
            init.conv(&self.name(&format!("enc{i}.conv1")), cin, self.width(i), 3)?;
            init.conv(&self.name(&format!("enc{i}.conv2")), self.width(i), self.width(i), 3)?;
        }
        let deep = self.width(l) * 2;
        init.conv(&self.name("bottleneck.conv1"), self.width(l), deep, 3)?;
        init.conv(&self.name("bottleneck.conv2"), deep, deep, 3)?;
        for i in (1..=l).rev() {
            let (wide, narrow) = (self.width(i) * 2, self.width(i));
            match self.kind {
                UNetKind::Plain => init.conv_transpose(&self.name(&format!("dec{i}.up")), wide, narrow)?,
                UNetKind::CrossDomain => {
                    init.conv_transpose(&self.name(&format!("dec{i}.up")), wide, wide)?;
                    init.conv(&self.name(&format!("dec{i}.halve")), wide, narrow, 1)?;
                }
            }
            init.conv(&self.name(&format!("dec{i}.conv1")), wide, narrow, 3)?;
            init.conv(&self.name(&format!("dec{i}.conv2")), narrow, narrow, 3)?;
        }
        init.conv(&self.name("out"), self.c, 2, 1)
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<F>, store: &ParamStore<F>, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() == 4 {
            super::check_divisible(shape[2], shape[3], self.levels)?;
        }
        let slope = F::of(self.leaky_slope);
        let pool = |g: &mut Graph<F>, h: Var| match self.kind {
            UNetKind::Plain => g.pool(h, PoolKind::Max),
            UNetKind::CrossDomain => cd_pool(g, h, PoolKind::Max),
        };
        let l = self.levels;
        let mut skips = Vec::with_capacity(l);
        let mut h = x;
        for i in 1..=l {
            if i > 1 {
                h = pool(g, h)?;
            }
            h = conv_act(g, store, &self.name(&format!("enc{i}.conv1")), h, slope)?;
            h = conv_act(g, store, &self.name(&format!("enc{i}.conv2")), h, slope)?;
            skips.push(h);
        }
        h = pool(g, h)?;
        h = conv_act(g, store, &self.name("bottleneck.conv1"), h, slope)?;
        h = conv_act(g, store, &self.name("bottleneck.conv2"), h, slope)?;
        for i in (1..=l).rev() {
            h = match self.kind {
                UNetKind::Plain => up(g, store, &self.name(&format!("dec{i}.up")), h)?,
                UNetKind::CrossDomain => {
                    let w = g.param(store, &self.name(&format!("dec{i}.up")))?;
                    let u = cd_upsample(g, h, w)?;
                    conv(g, store, &self.name(&format!("dec{i}.halve")), u)?
                }
            };
            h = g.leaky_relu(h, slope);
            h = g.concat(h, skips[i - 1])?;
            h = conv_act(g, store, &self.name(&format!("dec{i}.conv1")), h, slope)?;
            h = conv_act(g, store, &self.name(&format!("dec{i}.conv2")), h, slope)?;
        }
        conv(g, store, &self.name("out"), h)
    }
}
