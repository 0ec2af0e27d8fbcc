//! Dual-input generator and PatchGAN discriminators.

mod discriminator;
mod generator;
pub mod ops;
mod spectral;

pub use discriminator::{Discriminator, DiscriminatorConfig};
pub use generator::{
    generator_forward, Generator, GeneratorConfig, GeneratorOutput, ResidualBlock,
};
pub use spectral::{spectral_normalize, SnConv2d, SpectralState};

use candle_core::Var;

/// Named trainable parameters, in a stable order.
pub type NamedVars = Vec<(String, Var)>;
