//! Identity-preserving style transfer from ID photos to Korean portraits.
//!
//! The crate is split along the pipeline:
//!
//! - [`data`]: image loading, cropping, resizing, high-boost sharpening,
//!   augmentation and dataset manifests
//! - [`landmarks`]: 68-point landmark sets, detection and the binary
//!   eye/nose/lip and head masks
//! - [`perceptual`]: VGG-16 feature extraction and Gram matrices
//! - [`networks`]: the dual I/O generator and the spectrally normalized
//!   PatchGAN discriminators
//! - [`losses`]: cycle, land, head, style, content and adversarial objectives
//! - [`training`]: learning-rate schedule, alternating updates,
//!   checkpoints and the ablation suite
//! - [`evaluation`]: PSNR, SSIM and the weighted-mean balance indicator
//! - [`synthetic`]: procedurally generated face-like datasets with known landmarks
//! - [`smoke`]: the toy end-to-end run and its checks

pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod landmarks;
pub mod losses;
pub mod networks;
pub mod perceptual;
pub mod prepare;
pub mod smoke;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
