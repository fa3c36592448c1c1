//! Noise-guided training-data distillation and exclusionary dual-branch loss
//! mathematics for real-world image super-resolution.
//!
//! * [`image`], [`resample`]: unit-range images, PNG I/O, anti-aliased bicubic
//!   resampling and the two-level HR/LR degradation.
//! * [`patch`], [`bank`]: grid patch statistics, characteristic intervals, the
//!   noise bank and noise injection.
//! * [`pipeline`]: cross-dataset distillation and training-pair emission.
//! * [`edl`]: soft masks, losses and gradient verification, generic over
//!   [`Scalar`].
//! * [`metrics`]: PSNR and SSIM.

pub mod bank;
pub mod edl;
pub mod error;
pub mod image;
pub mod metrics;
pub mod patch;
pub mod pipeline;
pub mod resample;
pub mod scalar;
pub mod synth;
pub mod tensor;

pub use bank::{
    build_bank, classify_patch, compute_cati, inject_noise, load_bank, sample_noise, save_bank,
    Cati, NoiseBank, PatchClass,
};
pub use error::{Error, Result};
pub use image::{load_image, save_image, to_luma, Image};
pub use metrics::{psnr, ssim, MetricReport};
pub use patch::{extract_patch_grid, patch_stats, Patch, PatchStats};
pub use pipeline::{distill, emit_pairs, DatasetManifest, DistilledDataset, RunConfig};
pub use resample::{bicubic_resize, degrade_pair, ScaleFactor};
pub use scalar::Scalar;
pub use tensor::Tensor3;

pub type Tensor3f = Tensor3<f32>;
pub type Tensor3d = Tensor3<f64>;
pub type Mask32 = edl::Mask<f32>;
pub type Mask64 = edl::Mask<f64>;
pub type LossWeights32 = edl::LossWeights<f32>;
pub type LossWeights64 = edl::LossWeights<f64>;
