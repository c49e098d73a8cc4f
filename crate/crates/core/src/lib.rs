//! Few-step 3D inpainting with wavelet-domain diffusion.
//!
//! The pipeline operates on dense 3D volumes: a single-level orthonormal Haar
//! transform ([`wavelet`]) moves images into an 8-channel coefficient space,
//! a DDPM forward/reverse kernel ([`diffusion`]) driven by configurable
//! variance schedules ([`schedule`]) perturbs and denoises that space, and a
//! small time-conditioned 3D convnet ([`denoiser`]) predicts clean
//! coefficients from a 24-channel conditioned input. [`training`] implements
//! the composite reconstruction loss and Adam loop, [`sampler`] the full
//! reverse-process inpainting inference, [`metrics`] SSIM/MSE/PSNR for
//! evaluation, and [`phantom`] deterministic synthetic data so the whole
//! stack trains and verifies on a laptop.

// validation guards are written `!(x > 0.0)` on purpose: the negation is
// true for NaN, so non-finite parameters are rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod metrics;
pub mod phantom;
pub mod sampler;
pub mod schedule;
pub mod training;
pub mod volume;
pub mod wavelet;

pub use error::{Error, Result};
pub use volume::{MaskVolume, NormRecord, Volume3D};
pub use wavelet::WaveletCoeffs;
