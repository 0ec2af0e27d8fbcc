//! High-boost sharpening: `A·f − mean3x3(f)` folded into one 3x3 kernel.

use serde::{Deserialize, Serialize};

use super::raw::RawImage;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharpenConfig {
    /// Boost coefficient; must be positive.
    pub boost: f64,
    pub enabled: bool,
}

impl Default for SharpenConfig {
    fn default() -> Self {
        Self {
            boost: 1.5,
            enabled: true,
        }
    }
}

impl SharpenConfig {
    pub fn new(boost: f64) -> Result<Self> {
        if !(boost > 0.0) || !boost.is_finite() {
            return Err(Error::Config(format!("sharpen.A must be > 0, got {boost}")));
        }
        Ok(Self {
            boost,
            enabled: true,
        })
    }

    /// Center coefficient of the integer-form kernel, `9A − 1`.
    pub fn alpha(&self) -> f64 {
        9.0 * self.boost - 1.0
    }

    /// The 3x3 kernel `(1/9)·[[-1,-1,-1],[-1,α,-1],[-1,-1,-1]]`, row-major.
    pub fn kernel(&self) -> [f64; 9] {
        let mut k = [-1.0 / 9.0; 9];
        k[4] = self.alpha() / 9.0;
        k
    }
}

/// Convolves one plane with `kernel` using replicated borders. No clamping.
pub fn convolve3x3(plane: &[f64], width: usize, height: usize, kernel: &[f64; 9]) -> Vec<f64> {
    let mut out = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for ky in 0..3 {
                let sy = (y + ky).saturating_sub(1).min(height - 1);
                for kx in 0..3 {
                    let sx = (x + kx).saturating_sub(1).min(width - 1);
                    acc += kernel[ky * 3 + kx] * plane[sy * width + sx];
                }
            }
            out[y * width + x] = acc;
        }
    }
    out
}

/// Unclamped high-boost response of each channel.
pub fn high_boost_response(raw: &RawImage, cfg: &SharpenConfig) -> [Vec<f64>; 3] {
    let kernel = cfg.kernel();
    let (w, h) = (raw.width(), raw.height());
    let mut planes: [Vec<f64>; 3] = Default::default();
    for (c, plane) in planes.iter_mut().enumerate() {
        let src: Vec<f64> = raw.pixels()[c..].iter().step_by(3).map(|&p| p as f64).collect();
        *plane = convolve3x3(&src, w, h, &kernel);
    }
    planes
}

/// Sharpens and clamps back to 8-bit. A disabled config passes through.
pub fn sharpen_high_boost(raw: &RawImage, cfg: &SharpenConfig) -> Result<RawImage> {
    if !cfg.enabled {
        return Ok(raw.clone());
    }
    if !(cfg.boost > 0.0) {
        return Err(Error::Config(format!("sharpen.A must be > 0, got {}", cfg.boost)));
    }
    let planes = high_boost_response(raw, cfg);
    let n = raw.width() * raw.height();
    let mut pixels = Vec::with_capacity(n * 3);
    for i in 0..n {
        for plane in &planes {
            pixels.push(plane[i].round().clamp(0.0, 255.0) as u8);
        }
    }
    raw.with_pixels(raw.width(), raw.height(), pixels)
}
