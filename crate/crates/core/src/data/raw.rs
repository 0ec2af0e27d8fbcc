use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which side of the translation an image belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    /// ID photos, the content domain `X`.
    #[serde(rename = "x")]
    Photo,
    /// Korean portraits, the style domain `Y`.
    #[serde(rename = "y")]
    Portrait,
}

impl Domain {
    pub fn dir_name(self) -> &'static str {
        match self {
            Domain::Photo => "x",
            Domain::Portrait => "y",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

/// An 8-bit RGB image, row-major, interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
    pub source_path: String,
    pub domain: Domain,
}

/// Rectangle with inclusive `(x0, y0)` and exclusive `(x1, y1)` corners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl CropBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> usize {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> usize {
        self.y1.saturating_sub(self.y0)
    }
}

impl RawImage {
    pub fn new(
        width: usize,
        height: usize,
        pixels: Vec<u8>,
        source_path: impl Into<String>,
        domain: Domain,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::ShapeMismatch {
                expected: format!("{width}x{height}x3 = {} bytes", width * height * 3),
                got: format!("{} bytes", pixels.len()),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
            source_path: source_path.into(),
            domain,
        })
    }

    /// An image filled with a single color.
    pub fn filled(width: usize, height: usize, rgb: [u8; 3], domain: Domain) -> Result<Self> {
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, pixels, "", domain)
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        domain: Domain,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, pixels, "", domain)
    }

    pub fn open(path: impl AsRef<Path>, domain: Domain) -> Result<Self> {
        let path = path.as_ref();
        let decoded = image::ImageReader::open(path)?
            .with_guessed_format()?
            .decode()
            .map_err(|source| Error::ImageDecode {
                path: path.to_path_buf(),
                source,
            })?
            .to_rgb8();
        let (w, h) = decoded.dimensions();
        Self::new(
            w as usize,
            h as usize,
            decoded.into_raw(),
            path.to_string_lossy(),
            domain,
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let buf = image::RgbImage::from_raw(
            self.width as u32,
            self.height as u32,
            self.pixels.clone(),
        )
        .expect("pixel buffer length is checked at construction");
        buf.save(path)?;
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Same image metadata with new pixel content of possibly different size.
    pub(crate) fn with_pixels(&self, width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        Self::new(width, height, pixels, self.source_path.clone(), self.domain)
    }

    /// Splits into per-channel planes as `f32`.
    pub fn planes(&self) -> [Vec<f32>; 3] {
        let n = self.width * self.height;
        let mut out = [vec![0f32; n], vec![0f32; n], vec![0f32; n]];
        for (i, px) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c][i] = px[c] as f32;
            }
        }
        out
    }

    /// Luma plane using BT.601 weights.
    pub fn luma(&self) -> Vec<f64> {
        self.pixels
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect()
    }
}

/// Crops a region out of `raw`. Without a box the image passes through.
pub fn load_and_crop(raw: RawImage, crop_box: Option<CropBox>) -> Result<RawImage> {
    let Some(b) = crop_box else {
        return Ok(raw);
    };
    if b.x1 > raw.width || b.y1 > raw.height || b.width() == 0 || b.height() == 0 {
        return Err(Error::CropOutOfBounds {
            x0: b.x0,
            y0: b.y0,
            x1: b.x1,
            y1: b.y1,
            width: raw.width,
            height: raw.height,
        });
    }
    let mut pixels = Vec::with_capacity(b.width() * b.height() * 3);
    for y in b.y0..b.y1 {
        let start = (y * raw.width + b.x0) * 3;
        pixels.extend_from_slice(&raw.pixels[start..start + b.width() * 3]);
    }
    raw.with_pixels(b.width(), b.height(), pixels)
}

/// Bilinear resample straight to a `size`x`size` square, ignoring aspect.
///
/// Uses pixel-center alignment with edge clamping, so a same-size resize is
/// the identity.
pub fn resize_to_canvas(raw: &RawImage, size: usize) -> Result<RawImage> {
    if size == 0 {
        return Err(Error::EmptyImage);
    }
    if raw.width == size && raw.height == size {
        return Ok(raw.clone());
    }
    let xs = axis_taps(raw.width, size);
    let ys = axis_taps(raw.height, size);
    let mut pixels = Vec::with_capacity(size * size * 3);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let p00 = raw.pixel(x0, y0);
            let p01 = raw.pixel(x1, y0);
            let p10 = raw.pixel(x0, y1);
            let p11 = raw.pixel(x1, y1);
            for c in 0..3 {
                let top = p00[c] as f32 * (1.0 - fx) + p01[c] as f32 * fx;
                let bottom = p10[c] as f32 * (1.0 - fx) + p11[c] as f32 * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                pixels.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    raw.with_pixels(size, size, pixels)
}

fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    let scale = src as f32 / dst as f32;
    (0..dst)
        .map(|d| {
            let s = ((d as f32 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f32);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, s - i0 as f32)
        })
        .collect()
}
