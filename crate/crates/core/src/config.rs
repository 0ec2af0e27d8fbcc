//! Plain-text `key = value` configuration.
//!
//! Lines starting with `#` are comments. Every key has a default; unknown
//! keys are rejected so typos surface before any work starts.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::SharpenConfig;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::networks::{DiscriminatorConfig, GeneratorConfig};
use crate::perceptual::Layer;
use crate::training::{AblationFlag, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    /// Raw dataset root with `{x,y}/{train,test}` folders.
    pub data_root: PathBuf,
    /// Where `preprocess` writes canvases, manifest and landmark cache.
    pub prepared_dir: PathBuf,
    /// Optional JSON `{ "y/train/<id>": {x0, y0, x1, y1} }` crop boxes.
    pub crops: Option<PathBuf>,
    pub sharpen: SharpenConfig,
    /// `synthetic` (rule-based) or `cache` (precomputed landmark JSON).
    pub landmark_detector: String,
    /// Landmark JSON used by the `cache` detector.
    pub landmark_model: Option<PathBuf>,
    pub mask_dilation: usize,
    /// Pretrained VGG-16 safetensors; seeded random weights when absent.
    pub vgg_weights: Option<PathBuf>,
    pub train: TrainConfig,
    pub run_dir: PathBuf,
    pub eval_dir: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            data_root: PathBuf::from("data"),
            prepared_dir: PathBuf::from("prepared"),
            crops: None,
            sharpen: SharpenConfig::default(),
            landmark_detector: "synthetic".into(),
            landmark_model: None,
            mask_dilation: 3,
            vgg_weights: None,
            train: TrainConfig::default(),
            run_dir: PathBuf::from("runs/main"),
            eval_dir: PathBuf::from("eval"),
        }
    }
}

pub const KEYS: &[&str] = &[
    "data.root",
    "data.prepared",
    "data.crops",
    "sharpen.A",
    "sharpen.enabled",
    "landmarks.detector",
    "landmarks.model",
    "landmarks.dilation",
    "vgg.weights",
    "layers.style",
    "layers.content",
    "image.size",
    "seed",
    "augment.hflip",
    "augment.blur",
    "augment.noise",
    "augment.prob",
    "augment.noise_sigma",
    "model.base_channels",
    "model.res_blocks",
    "disc.base_channels",
    "train.epochs",
    "train.lr",
    "train.decay_start",
    "train.batch_size",
    "train.beta1",
    "train.beta2",
    "train.checkpoint_every",
    "train.out",
    "loss.lambda_cy",
    "loss.lambda_l",
    "loss.lambda_h",
    "loss.lambda_s",
    "loss.lambda_c",
    "loss.lambda_adv",
    "ablation.drop",
    "eval.out",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{value}' for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean '{value}' for {key}"))),
    }
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn parse_layers(key: &str, value: &str) -> Result<Vec<Layer>> {
    let layers = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(Layer::from_str)
        .collect::<Result<Vec<_>>>()?;
    if layers.is_empty() {
        return Err(Error::Config(format!("{key} needs at least one layer")));
    }
    Ok(layers)
}

fn join_layers(layers: &[Layer]) -> String {
    layers.iter().map(|l| l.name()).collect::<Vec<_>>().join(",")
}

fn path_str(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl Config {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{kv}' is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "data.root" => self.data_root = PathBuf::from(value),
            "data.prepared" => self.prepared_dir = PathBuf::from(value),
            "data.crops" => self.crops = optional_path(value),
            "sharpen.A" => self.sharpen.boost = SharpenConfig::new(parse(key, value)?)?.boost,
            "sharpen.enabled" => self.sharpen.enabled = parse_bool(key, value)?,
            "landmarks.detector" => match value {
                "synthetic" | "cache" => self.landmark_detector = value.to_string(),
                _ => return Err(Error::Config(format!("unknown landmark detector '{value}'"))),
            },
            "landmarks.model" => self.landmark_model = optional_path(value),
            "landmarks.dilation" => self.mask_dilation = parse(key, value)?,
            "vgg.weights" => self.vgg_weights = optional_path(value),
            "layers.style" => t.style_layers = parse_layers(key, value)?,
            "layers.content" => t.content_layers = parse_layers(key, value)?,
            "image.size" => t.image_size = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "augment.hflip" => t.augment.hflip = parse_bool(key, value)?,
            "augment.blur" => t.augment.blur = parse_bool(key, value)?,
            "augment.noise" => t.augment.noise = parse_bool(key, value)?,
            "augment.prob" => t.augment.probability = parse(key, value)?,
            "augment.noise_sigma" => t.augment.params.noise_sigma = parse(key, value)?,
            "model.base_channels" => t.generator.base_channels = parse(key, value)?,
            "model.res_blocks" => t.generator.res_blocks = parse(key, value)?,
            "disc.base_channels" => t.discriminator.base_channels = parse(key, value)?,
            "train.epochs" => t.epochs = parse(key, value)?,
            "train.lr" => t.lr0 = parse(key, value)?,
            "train.decay_start" => t.decay_start_fraction = parse(key, value)?,
            "train.batch_size" => t.batch_size = parse(key, value)?,
            "train.beta1" => t.beta1 = parse(key, value)?,
            "train.beta2" => t.beta2 = parse(key, value)?,
            "train.checkpoint_every" => t.checkpoint_every = parse(key, value)?,
            "train.out" => self.run_dir = PathBuf::from(value),
            "loss.lambda_cy" => t.weights.cycle = parse(key, value)?,
            "loss.lambda_l" => t.weights.land = parse(key, value)?,
            "loss.lambda_h" => t.weights.head = parse(key, value)?,
            "loss.lambda_s" => t.weights.style = parse(key, value)?,
            "loss.lambda_c" => t.weights.content = parse(key, value)?,
            "loss.lambda_adv" => t.weights.adversarial = parse(key, value)?,
            "ablation.drop" => {
                t.ablation = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(AblationFlag::from_str)
                    .collect::<Result<BTreeSet<_>>>()?;
            }
            "eval.out" => self.eval_dir = PathBuf::from(value),
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Full validation; call before any side effects.
    pub fn validate(&self) -> Result<()> {
        if self.landmark_detector == "cache" && self.landmark_model.is_none() {
            return Err(Error::Config(
                "landmarks.detector = cache requires landmarks.model".into(),
            ));
        }
        self.train.validate()
    }

    /// Serializes every key, so the output reloads to an equal config.
    pub fn to_kv_string(&self) -> String {
        let t = &self.train;
        let w: &LossWeights = &t.weights;
        let g: &GeneratorConfig = &t.generator;
        let d: &DiscriminatorConfig = &t.discriminator;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("data.root", self.data_root.display().to_string());
        put("data.prepared", self.prepared_dir.display().to_string());
        put("data.crops", path_str(&self.crops));
        put("sharpen.A", self.sharpen.boost.to_string());
        put("sharpen.enabled", self.sharpen.enabled.to_string());
        put("landmarks.detector", self.landmark_detector.clone());
        put("landmarks.model", path_str(&self.landmark_model));
        put("landmarks.dilation", self.mask_dilation.to_string());
        put("vgg.weights", path_str(&self.vgg_weights));
        put("layers.style", join_layers(&t.style_layers));
        put("layers.content", join_layers(&t.content_layers));
        put("image.size", t.image_size.to_string());
        put("seed", t.seed.to_string());
        put("augment.hflip", t.augment.hflip.to_string());
        put("augment.blur", t.augment.blur.to_string());
        put("augment.noise", t.augment.noise.to_string());
        put("augment.prob", t.augment.probability.to_string());
        put("augment.noise_sigma", t.augment.params.noise_sigma.to_string());
        put("model.base_channels", g.base_channels.to_string());
        put("model.res_blocks", g.res_blocks.to_string());
        put("disc.base_channels", d.base_channels.to_string());
        put("train.epochs", t.epochs.to_string());
        put("train.lr", t.lr0.to_string());
        put("train.decay_start", t.decay_start_fraction.to_string());
        put("train.batch_size", t.batch_size.to_string());
        put("train.beta1", t.beta1.to_string());
        put("train.beta2", t.beta2.to_string());
        put("train.checkpoint_every", t.checkpoint_every.to_string());
        put("train.out", self.run_dir.display().to_string());
        put("loss.lambda_cy", w.cycle.to_string());
        put("loss.lambda_l", w.land.to_string());
        put("loss.lambda_h", w.head.to_string());
        put("loss.lambda_s", w.style.to_string());
        put("loss.lambda_c", w.content.to_string());
        put("loss.lambda_adv", w.adversarial.to_string());
        put(
            "ablation.drop",
            t.ablation.iter().map(|f| f.name()).collect::<Vec<_>>().join(","),
        );
        put("eval.out", self.eval_dir.display().to_string());
        out
    }
}
