//! Dual-domain MRI reconstruction from undersampled single-coil k-space.
//!
//! The crate bundles everything needed to build, train and audit the
//! KV-Net family of networks at desk scale:
//!
//! * [`tensor`]: a dense tensor type with a tape-based reverse-mode autodiff
//!   engine covering the primitives the networks use.
//! * [`fourier`]: centered orthonormal 2D FFTs and the channel-paired view
//!   used for multi-channel k-space features.
//! * [`sampling`]: Cartesian phase-line masks, masking and zero-filling.
//! * [`metrics`]: SSIM (differentiable), PSNR and NMSE.
//! * [`models`]: V-Net, the reference U-Net, K-Net with cross-domain
//!   pooling/upsampling, data consistency, fusion, the KV-block cascade and
//!   closed-form parameter counting.
//! * [`training`]: synthetic phantoms, RMSProp, the SSIM-loss training loop,
//!   evaluation and checkpoints.
//! * [`io`]: the KSP1, MSK1, PGM and CSV file formats.

pub mod error;
pub mod fourier;
pub mod io;
pub mod metrics;
pub mod models;
pub mod sampling;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Graph, ParamKind, ParamStore, Real, Tensor, Var};
