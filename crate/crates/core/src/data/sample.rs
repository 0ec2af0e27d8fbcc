use candle_core::{DType, Device, Tensor};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::raw::{Domain, RawImage};
use crate::error::{Error, Result};

/// Training-time augmentation applied to a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Augmentation {
    None,
    Hflip,
    Blur,
    Noise,
}

/// A square RGB image with values in `[-1, 1]`, stored row-major and interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    size: usize,
    values: Vec<f32>,
    pub id: String,
    pub domain: Domain,
    pub augmentation: Augmentation,
}

impl ImageSample {
    pub fn new(size: usize, values: Vec<f32>, id: impl Into<String>, domain: Domain) -> Result<Self> {
        if values.len() != size * size * 3 || size == 0 {
            return Err(Error::ShapeMismatch {
                expected: format!("{size}x{size}x3"),
                got: format!("{} values", values.len()),
            });
        }
        if values.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::Dataset("sample values must lie in [-1, 1]".into()));
        }
        Ok(Self {
            size,
            values,
            id: id.into(),
            domain,
            augmentation: Augmentation::None,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// `(1, 3, H, W)` tensor.
    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        let s = self.size;
        let t = Tensor::from_slice(&self.values, (1, s, s, 3), device)?
            .permute((0, 3, 1, 2))?
            .contiguous()?
            .to_dtype(dtype)?;
        Ok(t)
    }

    /// Builds a sample from a `(3, H, W)` or `(1, 3, H, W)` tensor, clamping to `[-1, 1]`.
    pub fn from_tensor(t: &Tensor, id: impl Into<String>, domain: Domain) -> Result<Self> {
        let t = match t.rank() {
            4 => t.squeeze(0)?,
            _ => t.clone(),
        };
        let (c, h, w) = t.dims3()?;
        if c != 3 || h != w {
            return Err(Error::ShapeMismatch {
                expected: "3xSxS".into(),
                got: format!("{c}x{h}x{w}"),
            });
        }
        let values: Vec<f32> = t
            .permute((1, 2, 0))?
            .contiguous()?
            .to_dtype(DType::F32)?
            .flatten_all()?
            .to_vec1()?
            .into_iter()
            .map(|v: f32| v.clamp(-1.0, 1.0))
            .collect();
        Self::new(h, values, id, domain)
    }
}

pub fn normalize_intensity(p: f32) -> f32 {
    p / 127.5 - 1.0
}

pub fn denormalize_value(v: f32) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Affine map `[0, 255] → [-1, 1]`. The image must already be square.
pub fn normalize(raw: &RawImage, id: impl Into<String>) -> Result<ImageSample> {
    if raw.width() != raw.height() {
        return Err(Error::ShapeMismatch {
            expected: "square image".into(),
            got: format!("{}x{}", raw.width(), raw.height()),
        });
    }
    let values = raw.pixels().iter().map(|&p| normalize_intensity(p as f32)).collect();
    ImageSample::new(raw.width(), values, id, raw.domain)
}

pub fn denormalize(sample: &ImageSample) -> RawImage {
    let pixels = sample.values.iter().map(|&v| denormalize_value(v)).collect();
    RawImage::new(sample.size, sample.size, pixels, sample.id.clone(), sample.domain)
        .expect("sample shape is validated at construction")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub blur_sigma: f32,
    pub noise_sigma: f32,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            blur_sigma: 1.0,
            noise_sigma: 0.05,
        }
    }
}

/// Applies one augmentation. Shape is always preserved.
pub fn augment<R: Rng + ?Sized>(
    sample: &ImageSample,
    kind: Augmentation,
    params: &AugmentParams,
    rng: &mut R,
) -> ImageSample {
    let s = sample.size;
    let values = match kind {
        Augmentation::None => sample.values.clone(),
        Augmentation::Hflip => {
            let mut out = vec![0f32; sample.values.len()];
            for y in 0..s {
                for x in 0..s {
                    let src = (y * s + x) * 3;
                    let dst = (y * s + (s - 1 - x)) * 3;
                    out[dst..dst + 3].copy_from_slice(&sample.values[src..src + 3]);
                }
            }
            out
        }
        Augmentation::Blur => gaussian_blur(&sample.values, s, params.blur_sigma),
        Augmentation::Noise => {
            let normal = Normal::new(0f32, params.noise_sigma.max(0.0))
                .expect("non-negative sigma is always valid");
            sample
                .values
                .iter()
                .map(|&v| (v + normal.sample(rng)).clamp(-1.0, 1.0))
                .collect()
        }
    };
    ImageSample {
        size: s,
        values,
        id: sample.id.clone(),
        domain: sample.domain,
        augmentation: kind,
    }
}

fn gaussian_taps(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut taps: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f32 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

/// Separable Gaussian on an interleaved RGB buffer, replicated borders.
fn gaussian_blur(values: &[f32], size: usize, sigma: f32) -> Vec<f32> {
    if !(sigma > 0.0) {
        return values.to_vec();
    }
    let taps = gaussian_taps(sigma);
    let r = (taps.len() / 2) as i64;
    let clampi = |i: i64| i.clamp(0, size as i64 - 1) as usize;
    let mut tmp = vec![0f32; values.len()];
    for y in 0..size {
        for x in 0..size {
            for c in 0..3 {
                let mut acc = 0.0;
                for (k, t) in taps.iter().enumerate() {
                    let sx = clampi(x as i64 + k as i64 - r);
                    acc += t * values[(y * size + sx) * 3 + c];
                }
                tmp[(y * size + x) * 3 + c] = acc;
            }
        }
    }
    let mut out = vec![0f32; values.len()];
    for y in 0..size {
        for x in 0..size {
            for c in 0..3 {
                let mut acc = 0.0;
                for (k, t) in taps.iter().enumerate() {
                    let sy = clampi(y as i64 + k as i64 - r);
                    acc += t * tmp[(sy * size + x) * 3 + c];
                }
                out[(y * size + x) * 3 + c] = acc.clamp(-1.0, 1.0);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(size: usize) -> ImageSample {
        let raw = RawImage::from_fn(size, size, Domain::Photo, |x, y| {
            [(x * 9 % 256) as u8, (y * 3 % 256) as u8, ((x * y) % 256) as u8]
        })
        .unwrap();
        normalize(&raw, "ramp").unwrap()
    }

    #[test]
    fn endpoints_and_midpoint() {
        assert_eq!(normalize_intensity(0.0), -1.0);
        assert_eq!(normalize_intensity(255.0), 1.0);
        assert_eq!(normalize_intensity(127.5), 0.0);
        assert_eq!(denormalize_value(-1.0), 0);
        assert_eq!(denormalize_value(1.0), 255);
    }

    #[test]
    fn hflip_is_an_involution() {
        let s = ramp(17);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = AugmentParams::default();
        let once = augment(&s, Augmentation::Hflip, &p, &mut rng);
        assert_ne!(once.values(), s.values());
        let twice = augment(&once, Augmentation::Hflip, &p, &mut rng);
        assert_eq!(twice.values(), s.values());
        assert_eq!(once.augmentation, Augmentation::Hflip);
    }

    #[test]
    fn blur_keeps_constant_images() {
        let s = ImageSample::new(12, vec![0.25; 12 * 12 * 3], "c", Domain::Portrait).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = augment(&s, Augmentation::Blur, &AugmentParams::default(), &mut rng);
        assert!(out.values().iter().all(|v| (v - 0.25).abs() < 1e-6));
    }

    #[test]
    fn noise_is_seed_deterministic_and_bounded() {
        let s = ramp(16);
        let p = AugmentParams {
            blur_sigma: 1.0,
            noise_sigma: 0.05,
        };
        let a = augment(&s, Augmentation::Noise, &p, &mut ChaCha8Rng::seed_from_u64(7));
        let b = augment(&s, Augmentation::Noise, &p, &mut ChaCha8Rng::seed_from_u64(7));
        let c = augment(&s, Augmentation::Noise, &p, &mut ChaCha8Rng::seed_from_u64(8));
        assert_eq!(a.values(), b.values());
        assert_ne!(a.values(), c.values());
        assert!(a.values().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn tensor_round_trip() {
        let s = ramp(8);
        let t = s.to_tensor(DType::F32, &Device::Cpu).unwrap();
        assert_eq!(t.dims(), &[1, 3, 8, 8]);
        let back = ImageSample::from_tensor(&t, "ramp", Domain::Photo).unwrap();
        assert_eq!(back.values(), s.values());
    }

    #[test]
    fn out_of_range_values_rejected() {
        assert!(ImageSample::new(1, vec![0.0, 1.5, 0.0], "bad", Domain::Photo).is_err());
        assert!(ImageSample::new(2, vec![0.0; 3], "bad", Domain::Photo).is_err());
    }
}
