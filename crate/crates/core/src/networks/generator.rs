use candle_core::{DType, Device, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::ops::{conv2d, conv_transpose2d, instance_norm, Init};
use super::NamedVars;
use crate::data::{Domain, ImageSample};
use crate::error::{Error, Result};

const NORM_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Channels after the first encoder conv; the bottleneck has 8x this.
    pub base_channels: usize,
    pub res_blocks: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            base_channels: 32,
            res_blocks: 9,
        }
    }
}

fn param(v: &Var, detach: bool) -> Tensor {
    if detach {
        v.as_tensor().detach()
    } else {
        v.as_tensor().clone()
    }
}

/// Convolution followed by instance norm, no bias (the norm cancels it).
#[derive(Debug)]
struct NormConv {
    weight: Var,
    stride: usize,
    padding: usize,
    transposed: bool,
}

impl NormConv {
    fn conv(init: &mut Init, cin: usize, cout: usize, k: usize, stride: usize, padding: usize) -> Result<Self> {
        Ok(Self {
            weight: init.normal(&[cout, cin, k, k], INIT_STD)?,
            stride,
            padding,
            transposed: false,
        })
    }

    fn deconv(init: &mut Init, cin: usize, cout: usize) -> Result<Self> {
        Ok(Self {
            weight: init.normal(&[cin, cout, 4, 4], INIT_STD)?,
            stride: 2,
            padding: 1,
            transposed: true,
        })
    }

    fn forward(&self, x: &Tensor, detach: bool) -> Result<Tensor> {
        let w = &param(&self.weight, detach);
        let y = if self.transposed {
            conv_transpose2d(x, w, None, self.stride, self.padding)?
        } else {
            conv2d(x, w, None, self.stride, self.padding)?
        };
        instance_norm(&y, NORM_EPS)
    }
}

/// `x + IN(conv(ReLU(IN(conv(x)))))`.
#[derive(Debug)]
pub struct ResidualBlock {
    first: NormConv,
    second: NormConv,
}

impl ResidualBlock {
    pub fn new(init: &mut Init, channels: usize) -> Result<Self> {
        Ok(Self {
            first: NormConv::conv(init, channels, channels, 3, 1, 1)?,
            second: NormConv::conv(init, channels, channels, 3, 1, 1)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.run(x, false)
    }

    fn run(&self, x: &Tensor, detach: bool) -> Result<Tensor> {
        let h = self.first.forward(x, detach)?.relu()?;
        Ok((x + self.second.forward(&h, detach)?)?)
    }

    pub fn vars(&self) -> [&Var; 2] {
        [&self.first.weight, &self.second.weight]
    }
}

#[derive(Debug)]
struct Encoder {
    stages: [NormConv; 3],
}

impl Encoder {
    fn new(init: &mut Init, b: usize) -> Result<Self> {
        Ok(Self {
            stages: [
                NormConv::conv(init, 3, b, 7, 1, 3)?,
                NormConv::conv(init, b, 2 * b, 4, 2, 1)?,
                NormConv::conv(init, 2 * b, 4 * b, 4, 2, 1)?,
            ],
        })
    }

    fn forward(&self, x: &Tensor, detach: bool) -> Result<Tensor> {
        let mut h = x.clone();
        for s in &self.stages {
            h = s.forward(&h, detach)?.relu()?;
        }
        Ok(h)
    }
}

#[derive(Debug)]
struct Decoder {
    up: [NormConv; 2],
    head_weight: Var,
    head_bias: Var,
}

impl Decoder {
    fn new(init: &mut Init, b: usize) -> Result<Self> {
        Ok(Self {
            up: [NormConv::deconv(init, 4 * b, 2 * b)?, NormConv::deconv(init, 2 * b, b)?],
            head_weight: init.normal(&[3, b, 7, 7], INIT_STD)?,
            head_bias: init.zeros(&[3])?,
        })
    }

    fn forward(&self, h: &Tensor, detach: bool) -> Result<Tensor> {
        let mut h = h.clone();
        for u in &self.up {
            h = u.forward(&h, detach)?.relu()?;
        }
        let bias = param(&self.head_bias, detach);
        let out = conv2d(&h, &param(&self.head_weight, detach), Some(&bias), 1, 3)?;
        Ok(out.tanh()?)
    }
}

/// `G(x, y) = (x_y, y_x)`.
#[derive(Debug, Clone)]
pub struct GeneratorOutput {
    /// Content of `x` rendered in the style of `y`.
    pub x_y: Tensor,
    /// Content of `y` rendered in the style of `x`.
    pub y_x: Tensor,
    /// Concatenated encoder features fed to the residual stack.
    pub bottleneck: Tensor,
}

#[derive(Debug)]
pub struct Generator {
    pub config: GeneratorConfig,
    encoder_x: Encoder,
    encoder_y: Encoder,
    blocks: Vec<ResidualBlock>,
    decoder_x: Decoder,
    decoder_y: Decoder,
}

fn check_input(t: &Tensor, which: &str) -> Result<(usize, usize)> {
    let dims = t.dims();
    if dims.len() != 4 || dims[1] != 3 || dims[2] != dims[3] || dims[2] % 4 != 0 || dims[2] == 0 {
        return Err(Error::ShapeMismatch {
            expected: format!("{which}: (B, 3, S, S) with S divisible by 4"),
            got: format!("{dims:?}"),
        });
    }
    Ok((dims[0], dims[2]))
}

impl Generator {
    pub fn new(config: GeneratorConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        let mut init = Init::new(seed, dtype, device);
        let b = config.base_channels;
        let encoder_x = Encoder::new(&mut init, b)?;
        let encoder_y = Encoder::new(&mut init, b)?;
        let blocks = (0..config.res_blocks)
            .map(|_| ResidualBlock::new(&mut init, 8 * b))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            encoder_x,
            encoder_y,
            blocks,
            decoder_x: Decoder::new(&mut init, b)?,
            decoder_y: Decoder::new(&mut init, b)?,
        })
    }

    pub fn forward(&self, x: &Tensor, y: &Tensor) -> Result<GeneratorOutput> {
        self.run(x, y, false)
    }

    /// Same as [`Generator::forward`] but records no autograd graph, so
    /// intermediates are freed as soon as they are consumed.
    pub fn infer(&self, x: &Tensor, y: &Tensor) -> Result<GeneratorOutput> {
        self.run(x, y, true)
    }

    fn run(&self, x: &Tensor, y: &Tensor, detach: bool) -> Result<GeneratorOutput> {
        let sx = check_input(x, "x")?;
        let sy = check_input(y, "y")?;
        if sx != sy {
            return Err(Error::ShapeMismatch {
                expected: format!("y shaped like x {:?}", x.dims()),
                got: format!("{:?}", y.dims()),
            });
        }
        let bottleneck = Tensor::cat(&[self.encoder_x.forward(x, detach)?, self.encoder_y.forward(y, detach)?], 1)?;
        let mut h = bottleneck.clone();
        for block in &self.blocks {
            h = block.run(&h, detach)?;
        }
        let half = 4 * self.config.base_channels;
        Ok(GeneratorOutput {
            x_y: self.decoder_x.forward(&h.narrow(1, 0, half)?, detach)?,
            y_x: self.decoder_y.forward(&h.narrow(1, half, half)?, detach)?,
            bottleneck,
        })
    }

    pub fn vars(&self) -> NamedVars {
        let mut out = Vec::new();
        for (tag, enc) in [("enc_x", &self.encoder_x), ("enc_y", &self.encoder_y)] {
            for (i, s) in enc.stages.iter().enumerate() {
                out.push((format!("g.{tag}.{i}.weight"), s.weight.clone()));
            }
        }
        for (i, b) in self.blocks.iter().enumerate() {
            let [w1, w2] = b.vars();
            out.push((format!("g.res.{i}.0.weight"), w1.clone()));
            out.push((format!("g.res.{i}.1.weight"), w2.clone()));
        }
        for (tag, dec) in [("dec_x", &self.decoder_x), ("dec_y", &self.decoder_y)] {
            for (i, u) in dec.up.iter().enumerate() {
                out.push((format!("g.{tag}.{i}.weight"), u.weight.clone()));
            }
            out.push((format!("g.{tag}.head.weight"), dec.head_weight.clone()));
            out.push((format!("g.{tag}.head.bias"), dec.head_bias.clone()));
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.vars().iter().map(|(_, v)| v.elem_count()).sum()
    }

    /// Parameter counts of (encoder_x, encoder_y, decoder_x, decoder_y).
    pub fn branch_parameter_counts(&self) -> [usize; 4] {
        let count = |prefix: &str| -> usize {
            self.vars()
                .iter()
                .filter(|(n, _)| n.starts_with(prefix))
                .map(|(_, v)| v.elem_count())
                .sum()
        };
        [count("g.enc_x."), count("g.enc_y."), count("g.dec_x."), count("g.dec_y.")]
    }
}

/// Runs the generator on one pair of samples.
pub fn generator_forward(
    x: &ImageSample,
    y: &ImageSample,
    generator: &Generator,
) -> Result<(ImageSample, ImageSample)> {
    let dtype = generator.vars()[0].1.dtype();
    let device = Device::Cpu;
    let out = generator.infer(&x.to_tensor(dtype, &device)?, &y.to_tensor(dtype, &device)?)?;
    Ok((
        ImageSample::from_tensor(&out.x_y, format!("{}_{}", x.id, y.id), Domain::Portrait)?,
        ImageSample::from_tensor(&out.y_x, format!("{}_{}", y.id, x.id), Domain::Photo)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::ops::scalar_f64;

    fn small() -> Generator {
        let cfg = GeneratorConfig {
            base_channels: 4,
            res_blocks: 2,
        };
        Generator::new(cfg, 3, DType::F32, &Device::Cpu).unwrap()
    }

    fn rand_image(seed: u64, s: usize) -> Tensor {
        Init::new(seed, DType::F32, &Device::Cpu)
            .normal_tensor(&[1, 3, s, s], 0.5)
            .unwrap()
            .clamp(-1f32, 1f32)
            .unwrap()
    }

    #[test]
    fn output_shapes_and_range() {
        let g = small();
        let out = g.forward(&rand_image(1, 32), &rand_image(2, 32)).unwrap();
        assert_eq!(out.x_y.dims(), [1, 3, 32, 32]);
        assert_eq!(out.y_x.dims(), [1, 3, 32, 32]);
        assert_eq!(out.bottleneck.dims(), [1, 32, 8, 8]);
        for t in [&out.x_y, &out.y_x] {
            assert!(scalar_f64(&t.abs().unwrap().max_all().unwrap()).unwrap() <= 1.0);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let g = small();
        assert!(g.forward(&rand_image(1, 32), &rand_image(2, 16)).is_err());
        let gray = Tensor::zeros((1, 1, 32, 32), DType::F32, &Device::Cpu).unwrap();
        assert!(g.forward(&gray, &gray).is_err());
        assert!(g.forward(&rand_image(1, 30), &rand_image(1, 30)).is_err());
    }

    #[test]
    fn infer_matches_forward_without_a_graph() {
        let g = small();
        let (x, y) = (rand_image(1, 16), rand_image(2, 16));
        let a = g.forward(&x, &y).unwrap();
        let b = g.infer(&x, &y).unwrap();
        assert_eq!(a.x_y.flatten_all().unwrap().to_vec1::<f32>().unwrap(), b.x_y.flatten_all().unwrap().to_vec1::<f32>().unwrap());
        let grads = b.x_y.sum_all().unwrap().backward().unwrap();
        assert!(g.vars().iter().all(|(_, v)| grads.get(v.as_tensor()).is_none()));
    }

    #[test]
    fn branches_are_symmetric() {
        let g = small();
        let [ex, ey, dx, dy] = g.branch_parameter_counts();
        assert_eq!(ex, ey);
        assert_eq!(dx, dy);
        assert!(ex > 0 && dx > 0);
    }

    #[test]
    fn zero_residual_block_is_identity() {
        let mut init = Init::new(0, DType::F32, &Device::Cpu);
        let block = ResidualBlock::new(&mut init, 3).unwrap();
        for v in block.vars() {
            v.set(&v.zeros_like().unwrap()).unwrap();
        }
        let x = rand_image(4, 8);
        let y = block.forward(&x).unwrap();
        let d = scalar_f64(&(y - &x).unwrap().abs().unwrap().max_all().unwrap()).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a = small().forward(&rand_image(1, 16), &rand_image(2, 16)).unwrap();
        let b = small().forward(&rand_image(1, 16), &rand_image(2, 16)).unwrap();
        let d = scalar_f64(&(a.x_y - b.x_y).unwrap().abs().unwrap().max_all().unwrap()).unwrap();
        assert_eq!(d, 0.0);
    }
}
