use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::AugmentParams;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::networks::{DiscriminatorConfig, GeneratorConfig};
use crate::perceptual::Layer;

/// A loss term removed for an ablation run. The cycle loss is never ablated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AblationFlag {
    #[serde(rename = "drop_Lc")]
    DropContent,
    #[serde(rename = "drop_Ls")]
    DropStyle,
    #[serde(rename = "drop_Ll")]
    DropLand,
    #[serde(rename = "drop_Lh")]
    DropHead,
}

impl AblationFlag {
    pub const ALL: [AblationFlag; 4] = [
        AblationFlag::DropContent,
        AblationFlag::DropStyle,
        AblationFlag::DropLand,
        AblationFlag::DropHead,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationFlag::DropContent => "drop_Lc",
            AblationFlag::DropStyle => "drop_Ls",
            AblationFlag::DropLand => "drop_Ll",
            AblationFlag::DropHead => "drop_Lh",
        }
    }

    /// Variant label used for run directories and reports.
    pub fn variant_label(self) -> &'static str {
        match self {
            AblationFlag::DropContent => "wo_Lc",
            AblationFlag::DropStyle => "wo_Ls",
            AblationFlag::DropLand => "wo_Ll",
            AblationFlag::DropHead => "wo_Lh",
        }
    }
}

impl fmt::Display for AblationFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationFlag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationFlag::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation flag '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub hflip: bool,
    pub blur: bool,
    pub noise: bool,
    /// Chance that a training sample is augmented at all.
    pub probability: f64,
    pub params: AugmentParams,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            hflip: true,
            blur: true,
            noise: true,
            probability: 0.5,
            params: AugmentParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub style_layers: Vec<Layer>,
    pub content_layers: Vec<Layer>,
    /// Side of the square training canvas.
    pub image_size: usize,
    pub seed: u64,
    pub augment: AugmentConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub epochs: usize,
    pub lr0: f64,
    pub decay_start_fraction: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub checkpoint_every: usize,
    pub weights: LossWeights,
    pub ablation: BTreeSet<AblationFlag>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            style_layers: vec![Layer::Conv2_2, Layer::Conv3_2],
            content_layers: vec![Layer::Conv4_1],
            image_size: 256,
            seed: 0,
            augment: AugmentConfig::default(),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            epochs: 200,
            lr0: 1e-4,
            decay_start_fraction: 0.5,
            batch_size: 1,
            beta1: 0.5,
            beta2: 0.999,
            checkpoint_every: 10,
            weights: LossWeights::default(),
            ablation: BTreeSet::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.epochs < 1 {
            return fail("train.epochs must be >= 1".into());
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return fail(format!("train.lr must be > 0, got {}", self.lr0));
        }
        if !(0.0..=1.0).contains(&self.decay_start_fraction) {
            return fail(format!("train.decay_start must lie in [0, 1], got {}", self.decay_start_fraction));
        }
        if self.batch_size < 1 {
            return fail("train.batch_size must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("Adam betas must lie in [0, 1)".into());
        }
        if self.image_size < 32 || self.image_size % 4 != 0 {
            return fail(format!("image.size must be a multiple of 4 and >= 32, got {}", self.image_size));
        }
        if self.generator.base_channels == 0 || self.discriminator.base_channels == 0 {
            return fail("channel counts must be >= 1".into());
        }
        if self.style_layers.is_empty() || self.content_layers.is_empty() {
            return fail("style and content layer lists must be nonempty".into());
        }
        if !(0.0..=1.0).contains(&self.augment.probability) {
            return fail("augment.prob must lie in [0, 1]".into());
        }
        if !(self.augment.params.noise_sigma >= 0.0) || !(self.augment.params.blur_sigma > 0.0) {
            return fail("augmentation sigmas must be positive".into());
        }
        self.weights.validate()
    }

    pub fn uses(&self, flag: AblationFlag) -> bool {
        !self.ablation.contains(&flag)
    }

    /// Label of this configuration in an ablation table.
    pub fn variant_label(&self) -> String {
        if self.ablation.is_empty() {
            "L_Total".into()
        } else {
            self.ablation.iter().map(|f| f.variant_label()).collect::<Vec<_>>().join("+")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn invalid_values_rejected() {
        let bad = [
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { lr0: 0.0, ..Default::default() },
            TrainConfig { decay_start_fraction: 1.5, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { image_size: 30, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn flag_names() {
        for f in AblationFlag::ALL {
            assert_eq!(f.name().parse::<AblationFlag>().unwrap(), f);
        }
        assert!("drop_Lcy".parse::<AblationFlag>().is_err());
    }
}
