//! VGG-16 feature extraction and Gram matrices for the perceptual losses.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::ImageSample;
use crate::error::{Error, Result};
use crate::networks::ops::{conv2d, derive_seed, Init};

/// The thirteen VGG-16 convolution layers; features are taken after the ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Layer {
    Conv1_1,
    Conv1_2,
    Conv2_1,
    Conv2_2,
    Conv3_1,
    Conv3_2,
    Conv3_3,
    Conv4_1,
    Conv4_2,
    Conv4_3,
    Conv5_1,
    Conv5_2,
    Conv5_3,
}

const ALL_LAYERS: [Layer; 13] = [
    Layer::Conv1_1,
    Layer::Conv1_2,
    Layer::Conv2_1,
    Layer::Conv2_2,
    Layer::Conv3_1,
    Layer::Conv3_2,
    Layer::Conv3_3,
    Layer::Conv4_1,
    Layer::Conv4_2,
    Layer::Conv4_3,
    Layer::Conv5_1,
    Layer::Conv5_2,
    Layer::Conv5_3,
];

// (in, out) channels per conv, in network order
const VGG_CHANNELS: [(usize, usize); 13] = [
    (3, 64),
    (64, 64),
    (64, 128),
    (128, 128),
    (128, 256),
    (256, 256),
    (256, 256),
    (256, 512),
    (512, 512),
    (512, 512),
    (512, 512),
    (512, 512),
    (512, 512),
];

/// A max-pool follows these conv indices.
const POOL_AFTER: [usize; 5] = [1, 3, 6, 9, 12];

const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

impl Layer {
    pub fn all() -> &'static [Layer] {
        &ALL_LAYERS
    }

    /// Position among the conv layers (0..13).
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        [
            "conv1_1", "conv1_2", "conv2_1", "conv2_2", "conv3_1", "conv3_2", "conv3_3", "conv4_1",
            "conv4_2", "conv4_3", "conv5_1", "conv5_2", "conv5_3",
        ][self.index()]
    }

    /// Index into torchvision's `vgg16().features`.
    pub fn feature_index(self) -> usize {
        [0, 2, 5, 7, 10, 12, 14, 17, 19, 21, 24, 26, 28][self.index()]
    }

    pub fn channels(self) -> usize {
        VGG_CHANNELS[self.index()].1
    }

    /// Spatial downsampling factor relative to the input.
    pub fn stride(self) -> usize {
        1 << POOL_AFTER.iter().filter(|&&p| p < self.index()).count()
    }

    /// Convolution block, 1 through 5.
    pub fn block(self) -> usize {
        POOL_AFTER.iter().filter(|&&p| p < self.index()).count() + 1
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Layer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ALL_LAYERS
            .iter()
            .copied()
            .find(|l| l.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::UnknownLayer(s.to_string()))
    }
}

impl TryFrom<String> for Layer {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Layer> for String {
    fn from(l: Layer) -> String {
        l.name().to_string()
    }
}

/// One feature map `(C, H', W')`.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub values: Tensor,
    pub layer: Layer,
}

/// `C x C` Gram matrix of a feature map.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub values: Tensor,
    pub layer: Layer,
}

/// Maps images in `[-1, 1]` of shape `(B, 3, H, W)` to features at the requested layers.
pub trait FeatureExtractor: Send + Sync {
    fn extract(&self, images: &Tensor, layers: &[Layer]) -> Result<Vec<Tensor>>;
}

/// `V Vᵀ` with `V` the `C x (H'W')` flattening of `f`.
pub fn gram(f: &FeatureMap) -> Result<GramMatrix> {
    let (c, h, w) = f.values.dims3()?;
    let v = f.values.reshape((c, h * w))?;
    Ok(GramMatrix {
        values: v.matmul(&v.t()?)?,
        layer: f.layer,
    })
}

/// Batched Gram: `(B, C, H, W) -> (B, C, C)`.
pub fn gram_batch(features: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = features.dims4()?;
    let v = features.reshape((b, c, h * w))?;
    Ok(v.matmul(&v.t()?)?)
}

/// Runs `extractor` on one sample and keys the maps by layer.
pub fn extract_features(
    extractor: &dyn FeatureExtractor,
    sample: &ImageSample,
    layers: &[Layer],
) -> Result<BTreeMap<Layer, FeatureMap>> {
    let x = sample.to_tensor(DType::F32, &Device::Cpu)?;
    let maps = extractor.extract(&x, layers)?;
    layers
        .iter()
        .zip(maps)
        .map(|(&layer, t)| {
            let values = t.squeeze(0)?;
            Ok((layer, FeatureMap { values, layer }))
        })
        .collect()
}

fn max_pool2(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    // floor semantics, as in torchvision
    let x = x.narrow(2, 0, h / 2 * 2)?.narrow(3, 0, w / 2 * 2)?;
    Ok(x.reshape((n, c, h / 2, 2, w / 2, 2))?.max(5)?.max(3)?)
}

/// Frozen VGG-16 convolutional trunk.
pub struct Vgg16 {
    convs: Vec<(Tensor, Tensor)>,
    mean: Tensor,
    std: Tensor,
    pretrained: bool,
}

impl Vgg16 {
    /// Loads torchvision-layout weights (`features.{i}.weight` / `.bias`).
    pub fn from_safetensors(path: impl AsRef<Path>, dtype: DType, device: &Device) -> Result<Self> {
        let path = path.as_ref();
        let tensors = candle_core::safetensors::load(path, device)?;
        let mut convs = Vec::with_capacity(13);
        for layer in ALL_LAYERS {
            let fetch = |suffix: &str| -> Result<Tensor> {
                let key = format!("features.{}.{suffix}", layer.feature_index());
                let t = tensors.get(&key).ok_or_else(|| Error::Checkpoint {
                    path: path.to_path_buf(),
                    reason: format!("missing tensor {key}"),
                })?;
                Ok(t.to_dtype(dtype)?)
            };
            let (w, b) = (fetch("weight")?, fetch("bias")?);
            let (cin, cout) = VGG_CHANNELS[layer.index()];
            if w.dims() != [cout, cin, 3, 3] || b.dims() != [cout] {
                return Err(Error::ShapeMismatch {
                    expected: format!("{layer} weight {cout}x{cin}x3x3"),
                    got: format!("{:?}", w.dims()),
                });
            }
            convs.push((w, b));
        }
        Self::assemble(convs, true, dtype, device)
    }

    /// He-initialized weights from `seed`, for runs without a pretrained file.
    pub fn seeded(seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        let mut init = Init::new(derive_seed(seed, "vgg16"), dtype, device);
        let convs = VGG_CHANNELS
            .iter()
            .map(|&(cin, cout)| {
                let std = (2.0 / (cin * 9) as f64).sqrt();
                Ok((
                    init.normal_tensor(&[cout, cin, 3, 3], std)?,
                    Tensor::zeros(cout, dtype, device)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::assemble(convs, false, dtype, device)
    }

    /// Pretrained weights when `path` is given, seeded weights otherwise.
    pub fn load_or_seeded(path: Option<&Path>, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        match path {
            Some(p) => Self::from_safetensors(p, dtype, device),
            None => {
                log::warn!("no VGG-16 weight file configured; using seeded random weights");
                Self::seeded(seed, dtype, device)
            }
        }
    }

    fn assemble(convs: Vec<(Tensor, Tensor)>, pretrained: bool, dtype: DType, device: &Device) -> Result<Self> {
        let mean = Tensor::from_slice(&IMAGENET_MEAN, (1, 3, 1, 1), device)?.to_dtype(dtype)?;
        let std = Tensor::from_slice(&IMAGENET_STD, (1, 3, 1, 1), device)?.to_dtype(dtype)?;
        Ok(Self {
            convs,
            mean,
            std,
            pretrained,
        })
    }

    pub fn is_pretrained(&self) -> bool {
        self.pretrained
    }

    /// `[-1, 1]` to ImageNet-normalized `[0, 1]` RGB.
    pub fn preprocess(&self, images: &Tensor) -> Result<Tensor> {
        let unit = ((images + 1.0)? * 0.5)?;
        Ok(unit.broadcast_sub(&self.mean)?.broadcast_div(&self.std)?)
    }
}

impl FeatureExtractor for Vgg16 {
    fn extract(&self, images: &Tensor, layers: &[Layer]) -> Result<Vec<Tensor>> {
        let Some(deepest) = layers.iter().map(|l| l.index()).max() else {
            return Ok(Vec::new());
        };
        let mut h = self.preprocess(images)?;
        let mut found: BTreeMap<usize, Tensor> = BTreeMap::new();
        for (i, (w, b)) in self.convs.iter().enumerate().take(deepest + 1) {
            if i > 0 && POOL_AFTER.contains(&(i - 1)) {
                h = max_pool2(&h)?;
            }
            h = conv2d(&h, w, Some(b), 1, 1)?.relu()?;
            found.insert(i, h.clone());
        }
        Ok(layers.iter().map(|l| found[&l.index()].clone()).collect())
    }
}

/// Two-stage tanh extractor with fixed seeded weights, for tests.
///
/// Layers in blocks 1 and 2 read the first stage; deeper layers read the second,
/// which is strided by 2. Smooth activations keep finite differences exact.
pub struct ToyExtractor {
    first: (Tensor, Tensor),
    second: (Tensor, Tensor),
}

impl ToyExtractor {
    pub fn new(channels: usize, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        let mut init = Init::new(seed, dtype, device);
        Ok(Self {
            first: (
                init.normal_tensor(&[channels, 3, 3, 3], 0.3)?,
                init.normal_tensor(&[channels], 0.1)?,
            ),
            second: (
                init.normal_tensor(&[channels, channels, 3, 3], 0.2)?,
                init.normal_tensor(&[channels], 0.1)?,
            ),
        })
    }
}

impl FeatureExtractor for ToyExtractor {
    fn extract(&self, images: &Tensor, layers: &[Layer]) -> Result<Vec<Tensor>> {
        let a = conv2d(images, &self.first.0, Some(&self.first.1), 1, 1)?.tanh()?;
        let b = conv2d(&a, &self.second.0, Some(&self.second.1), 2, 1)?.tanh()?;
        Ok(layers
            .iter()
            .map(|l| if l.block() <= 2 { a.clone() } else { b.clone() })
            .collect())
    }
}

/// Multiplies every feature of an inner extractor by a constant.
pub struct ScaledExtractor<E> {
    pub inner: E,
    pub scale: f64,
}

impl<E: FeatureExtractor> FeatureExtractor for ScaledExtractor<E> {
    fn extract(&self, images: &Tensor, layers: &[Layer]) -> Result<Vec<Tensor>> {
        self.inner
            .extract(images, layers)?
            .into_iter()
            .map(|t| Ok((t * self.scale)?))
            .collect()
    }
}
