//! Image-domain V-Net with two-side residual connections.
//!
//! Layer map for entry width `c` and `L` levels (all convs 3×3 unless noted),
//! one line per closed-form term:
//!
//! * encoder `D1`: `2 -> c`, `c -> c`; `D_i` (i >= 2): `2^{i-2}c -> 2^{i-1}c`,
//!   `2^{i-1}c -> 2^{i-1}c`, with 2×2 max pooling between blocks;
//! * bottleneck: `2^{L-1}c -> 2^L c`, `2^L c -> 2^{L-1}c` (linear), plus the
//!   bottleneck input added back;
//! * decoder `E_i` (i >= 2): 2×2 transposed conv `2^{i-1}c -> 2^{i-1}c`, add
//!   the tail of `D_i` (top side), SE attention, `2^{i-1}c -> 2^{i-2}c`,
//!   `2^{i-2}c -> 2^{i-2}c`, add the input that entered `D_i` (bottom side);
//! * `E1`: transposed conv `c -> c`, add the tail of `D1`, SE, `c -> c`,
//!   `c -> c`, 1×1 `c -> 2`, add the network input.

use super::layers::{conv, conv_act, se_attention, up, Init};
use crate::error::Result;
use crate::tensor::{Graph, ParamStore, PoolKind, Real, Var};

#[derive(Clone, Debug)]
pub struct VNet {
    pub prefix: String,
    pub c: usize,
    pub levels: usize,
    pub leaky_slope: f64,
    pub se_reduction: usize,
}

impl VNet {
    pub fn new(prefix: impl Into<String>, c: usize, levels: usize, leaky_slope: f64, se_reduction: usize) -> Self {
        Self {
            prefix: prefix.into(),
            c,
            levels,
            leaky_slope,
            se_reduction,
        }
    }

    fn name(&self, rest: &str) -> String {
        format!("{}.{rest}", self.prefix)
    }

    /// Width of level `i` (1-based): `2^{i-1} c`.
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
        init.conv(&self.name("bottleneck.conv2"), deep, self.width(l), 3)?;
        for i in (1..=l).rev() {
            let wi = self.width(i);
            init.conv_transpose(&self.name(&format!("dec{i}.up")), wi, wi)?;
            init.se(&self.name(&format!("dec{i}.se")), wi, self.se_reduction)?;
            if i > 1 {
                let wo = self.width(i - 1);
                init.conv(&self.name(&format!("dec{i}.conv1")), wi, wo, 3)?;
                init.conv(&self.name(&format!("dec{i}.conv2")), wo, wo, 3)?;
            } else {
                init.conv(&self.name("dec1.conv1"), wi, wi, 3)?;
                init.conv(&self.name("dec1.conv2"), wi, wi, 3)?;
                init.conv(&self.name("dec1.out"), wi, 2, 1)?;
            }
        }
        Ok(())
    }

    /// `x: [N, 2, H, W]` complex image to a same-shaped estimate.
    pub fn forward<F: Real>(&self, g: &mut Graph<F>, store: &ParamStore<F>, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() == 4 {
            super::check_divisible(shape[2], shape[3], self.levels)?;
        }
        let slope = F::of(self.leaky_slope);
        let l = self.levels;
        let mut block_inputs = Vec::with_capacity(l);
        let mut tails = Vec::with_capacity(l);
        let mut h = x;
        for i in 1..=l {
            if i > 1 {
                h = g.pool(h, PoolKind::Max)?;
            }
            block_inputs.push(h);
            h = conv_act(g, store, &self.name(&format!("enc{i}.conv1")), h, slope)?;
            h = conv_act(g, store, &self.name(&format!("enc{i}.conv2")), h, slope)?;
            tails.push(h);
        }
        let bn_in = g.pool(h, PoolKind::Max)?;
        h = conv_act(g, store, &self.name("bottleneck.conv1"), bn_in, slope)?;
        h = conv(g, store, &self.name("bottleneck.conv2"), h)?;
        h = g.add(h, bn_in)?;
        for i in (1..=l).rev() {
            h = up(g, store, &self.name(&format!("dec{i}.up")), h)?;
            h = g.add(h, tails[i - 1])?;
            h = se_attention(g, store, &self.name(&format!("dec{i}.se")), h, slope)?;
            h = conv_act(g, store, &self.name(&format!("dec{i}.conv1")), h, slope)?;
            h = conv_act(g, store, &self.name(&format!("dec{i}.conv2")), h, slope)?;
            if i > 1 {
                h = g.add(h, block_inputs[i - 1])?;
            } else {
                h = conv(g, store, &self.name("dec1.out"), h)?;
                h = g.add(h, x)?;
            }
        }
        Ok(h)
    }
}
