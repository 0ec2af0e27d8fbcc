use candle_core::{DType, Device, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::ops::{conv2d, leaky_relu, Init};
use super::spectral::SnConv2d;
use super::NamedVars;
use crate::error::{Error, Result};

const SLOPE: f64 = 0.2;
const STRIDES: [usize; 5] = [2, 2, 2, 1, 1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    /// Channels of the first layer; doubled per layer up to 8x.
    pub base_channels: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { base_channels: 64 }
    }
}

/// Five 4x4 convolutions producing a grid of raw patch scores.
///
/// The first four layers are spectrally normalized and use LeakyReLU. A 256
/// input yields a 30x30 grid.
#[derive(Debug)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    pub layers: Vec<SnConv2d>,
    pub out_weight: Var,
    pub out_bias: Var,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        let mut init = Init::new(seed, dtype, device);
        let b = config.base_channels;
        let chans = [3, b, 2 * b, 4 * b, 8 * b];
        let layers = (0..4)
            .map(|i| SnConv2d::new(&mut init, chans[i], chans[i + 1], 4, STRIDES[i], 1))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            layers,
            out_weight: init.normal(&[1, 8 * b, 4, 4], 0.02)?,
            out_bias: init.zeros(&[1])?,
        })
    }

    /// Output grid side for a square input of side `size`.
    pub fn grid_size(size: usize) -> usize {
        STRIDES.iter().fold(size, |s, &st| (s + 2 - 4) / st + 1)
    }

    /// `power_iterations` advances each spectral estimate; pass 0 outside the D update.
    pub fn forward(&mut self, x: &Tensor, power_iterations: usize) -> Result<Tensor> {
        let dims = x.dims();
        if dims.len() != 4 || dims[1] != 3 || dims[2] != dims[3] || dims[2] < 32 {
            return Err(Error::ShapeMismatch {
                expected: "(B, 3, S, S) with S >= 32".into(),
                got: format!("{dims:?}"),
            });
        }
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = leaky_relu(&layer.forward(&h, power_iterations)?, SLOPE)?;
        }
        conv2d(&h, self.out_weight.as_tensor(), Some(self.out_bias.as_tensor()), STRIDES[4], 1)
    }

    pub fn vars(&self, prefix: &str) -> NamedVars {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.{i}.weight"), l.weight.clone()));
            out.push((format!("{prefix}.{i}.bias"), l.bias.clone()));
        }
        out.push((format!("{prefix}.4.weight"), self.out_weight.clone()));
        out.push((format!("{prefix}.4.bias"), self.out_bias.clone()));
        out
    }

    /// Power-iteration vectors, named `{prefix}.{i}.u` / `.v`.
    pub fn spectral_tensors(&self, prefix: &str) -> Vec<(String, Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("{prefix}.{i}.u"), l.state.u.clone()),
                    (format!("{prefix}.{i}.v"), l.state.v.clone()),
                ]
            })
            .collect()
    }

    pub fn set_spectral_tensor(&mut self, index: usize, which: char, t: Tensor) -> Result<()> {
        let layer = self
            .layers
            .get_mut(index)
            .ok_or_else(|| Error::Config(format!("no spectral layer {index}")))?;
        let slot = match which {
            'u' => &mut layer.state.u,
            'v' => &mut layer.state.v,
            _ => return Err(Error::Config(format!("bad spectral vector '{which}'"))),
        };
        if slot.dims() != t.dims() {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", slot.dims()),
                got: format!("{:?}", t.dims()),
            });
        }
        *slot = t;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::ops::scalar_f64;

    fn rand_image(seed: u64, s: usize) -> Tensor {
        Init::new(seed, DType::F32, &Device::Cpu).normal_tensor(&[2, 3, s, s], 0.5).unwrap()
    }

    #[test]
    fn grid_sizes() {
        assert_eq!(Discriminator::grid_size(256), 30);
        assert_eq!(Discriminator::grid_size(64), 6);
        let mut d = Discriminator::new(DiscriminatorConfig { base_channels: 4 }, 0, DType::F32, &Device::Cpu)
            .unwrap();
        assert_eq!(d.forward(&rand_image(1, 64), 1).unwrap().dims(), [2, 1, 6, 6]);
    }

    #[test]
    fn zero_weights_give_zero_grid() {
        let mut d = Discriminator::new(DiscriminatorConfig { base_channels: 4 }, 0, DType::F32, &Device::Cpu)
            .unwrap();
        for (_, v) in d.vars("d") {
            v.set(&v.zeros_like().unwrap()).unwrap();
        }
        let out = d.forward(&rand_image(2, 64), 1).unwrap();
        assert_eq!(scalar_f64(&out.abs().unwrap().sum_all().unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn frozen_forward_is_deterministic() {
        let mut d = Discriminator::new(DiscriminatorConfig { base_channels: 4 }, 0, DType::F32, &Device::Cpu)
            .unwrap();
        let x = rand_image(3, 32);
        let a = d.forward(&x, 0).unwrap();
        let b = d.forward(&x, 0).unwrap();
        assert_eq!(scalar_f64(&(a - b).unwrap().abs().unwrap().max_all().unwrap()).unwrap(), 0.0);
    }
}
