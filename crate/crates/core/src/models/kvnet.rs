//! The KV-block cascade.
//!
//! Each block runs a K-Net on the current k-space estimate and a V-Net on the
//! current image estimate in parallel. Their outputs are pulled back toward
//! the measurements (K-DC in k-space, I-DC through an FFT round trip), fused
//! in the image domain, and the fused image plus its transform feed the next
//! block. The final block's image is reduced to a magnitude.

use super::layers::Init;
use super::{Branches, ModelConfig, UNet, VNet};
use crate::error::{Error, Result};
use crate::fourier::ComplexImage;
use crate::sampling::Mask;
use crate::tensor::{Graph, ParamStore, Real, SpectralDirection, Tensor, Var};

/// Network input for `N` slices: masked k-space `[N, 2, H, W]` (real plane,
/// imaginary plane) and the per-slice column masks flattened to `[N * W]`.
#[derive(Clone, Debug)]
pub struct Batch<F> {
    pub kspace: Tensor<F>,
    pub mask: Vec<F>,
}

impl<F: Real> Batch<F> {
    pub fn from_slices(kspaces: &[&ComplexImage<F>], masks: &[&Mask]) -> Result<Self> {
        let first = kspaces.first().ok_or_else(|| Error::invalid("empty batch"))?;
        if masks.len() != kspaces.len() {
            return Err(Error::invalid(format!(
                "batch has {} slices but {} masks",
                kspaces.len(),
                masks.len()
            )));
        }
        let (h, w) = (first.height(), first.width());
        let mut data = Vec::with_capacity(kspaces.len() * 2 * h * w);
        let mut mask = Vec::with_capacity(kspaces.len() * w);
        for (k, m) in kspaces.iter().zip(masks) {
            if k.height() != h || k.width() != w {
                return Err(Error::shape("batch", "slice", format!("{h}x{w}"), &[k.height(), k.width()]));
            }
            if m.len() != w {
                return Err(Error::shape("batch", "mask", format!("length {w}"), &[m.len()]));
            }
            data.extend_from_slice(&k.re);
            data.extend_from_slice(&k.im);
            mask.extend(m.as_weights::<F>());
        }
        Ok(Self {
            kspace: Tensor::new(&[kspaces.len(), 2, h, w], data)?,
            mask,
        })
    }

    pub fn len(&self) -> usize {
        self.kspace.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug)]
pub struct KvNet {
    pub config: ModelConfig,
}

impl KvNet {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn vnet(&self, block: usize) -> VNet {
        let c = &self.config;
        VNet::new(format!("block{block}.vnet"), c.c_v, c.levels, c.leaky_slope, c.se_reduction)
    }

    pub fn knet(&self, block: usize) -> UNet {
        let c = &self.config;
        UNet::knet(format!("block{block}.knet"), c.c_k, c.levels, c.leaky_slope)
    }

    fn uses_k(&self) -> bool {
        self.config.branches != Branches::VNetOnly
    }

    fn uses_v(&self) -> bool {
        self.config.branches != Branches::KNetOnly
    }

    /// Fresh parameters: K-Net, V-Net, then `gamma_k`, `gamma_i`, `mu` per
    /// block, in that order. `gamma`s start at 1 (hard DC), `mu` at 1.
    pub fn init_params<F: Real>(&self, seed: u64) -> Result<ParamStore<F>> {
        let mut store = ParamStore::new();
        let mut init = Init::new(&mut store, seed, self.config.leaky_slope);
        for t in 0..self.config.blocks {
            if self.uses_k() {
                self.knet(t).init(&mut init)?;
            }
            if self.uses_v() {
                self.vnet(t).init(&mut init)?;
            }
            if self.uses_k() {
                init.scalar(&format!("block{t}.gamma_k"), 1.0)?;
            }
            if self.uses_v() {
                init.scalar(&format!("block{t}.gamma_i"), 1.0)?;
            }
            if self.config.branches == Branches::Both {
                init.scalar(&format!("block{t}.mu"), 1.0)?;
            }
        }
        Ok(store)
    }

    /// One KV-block. Returns `(image', kspace')` with `kspace' = fft2c(image')`.
    #[allow(clippy::too_many_arguments)]
    pub fn block_forward<F: Real>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        block: usize,
        image: Var,
        kspace: Var,
        raw: &[F],
        mask: &[F],
    ) -> Result<(Var, Var)> {
        let a_k = if self.uses_k() {
            let k_hat = self.knet(block).forward(g, store, kspace)?;
            let gamma = g.param(store, &format!("block{block}.gamma_k"))?;
            let b_k = g.data_consistency(k_hat, gamma, raw, mask)?;
            Some(g.spectral(b_k, SpectralDirection::Inverse)?)
        } else {
            None
        };
        let a_v = if self.uses_v() {
            let v = self.vnet(block).forward(g, store, image)?;
            let gamma = g.param(store, &format!("block{block}.gamma_i"))?;
            // ifft(DC(fft(v))) written as v + ifft(DC(fft(v)) - fft(v))
            let kv = g.spectral(v, SpectralDirection::Forward)?;
            let corr = g.dc_correction(kv, gamma, raw, mask)?;
            let corr = g.spectral(corr, SpectralDirection::Inverse)?;
            Some(g.add(v, corr)?)
        } else {
            None
        };
        let fused = match (a_v, a_k) {
            (Some(av), Some(ak)) => {
                let mu = g.param(store, &format!("block{block}.mu"))?;
                g.fuse(av, ak, mu)?
            }
            (Some(av), None) => av,
            (None, Some(ak)) => ak,
            (None, None) => unreachable!("at least one branch is active"),
        };
        let next_k = g.spectral(fused, SpectralDirection::Forward)?;
        Ok((fused, next_k))
    }

    /// Final complex image estimate `[N, 2, H, W]`.
    pub fn forward_complex<F: Real>(&self, g: &mut Graph<F>, store: &ParamStore<F>, batch: &Batch<F>) -> Result<Var> {
        let s = batch.kspace.shape();
        self.config.check_extent(s[2], s[3])?;
        let raw = batch.kspace.data();
        let mut kspace = g.constant(batch.kspace.clone());
        let mut image = g.spectral(kspace, SpectralDirection::Inverse)?;
        for t in 0..self.config.blocks {
            (image, kspace) = self.block_forward(g, store, t, image, kspace, raw, &batch.mask)?;
        }
        Ok(image)
    }

    /// Magnitude reconstruction `[N, 1, H, W]`.
    pub fn forward<F: Real>(&self, g: &mut Graph<F>, store: &ParamStore<F>, batch: &Batch<F>) -> Result<Var> {
        let image = self.forward_complex(g, store, batch)?;
        g.magnitude(image)
    }

    /// Magnitude reconstruction of one masked k-space slice, no gradients.
    pub fn reconstruct<F: Real>(&self, store: &ParamStore<F>, k_masked: &ComplexImage<F>, mask: &Mask) -> Result<Vec<F>> {
        let batch = Batch::from_slices(&[k_masked], &[mask])?;
        let mut g = Graph::new();
        let out = self.forward(&mut g, store, &batch)?;
        Ok(g.value(out).data().to_vec())
    }
}
