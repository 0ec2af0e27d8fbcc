use crate::data::RawImage;
use crate::error::{Error, Result};

pub const PSNR_CAP: f64 = 100.0;
const MAX: f64 = 255.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = (0.01 * MAX) * (0.01 * MAX);
pub const SSIM_C2: f64 = (0.03 * MAX) * (0.03 * MAX);

fn same_dims(a: &RawImage, b: &RawImage) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", a.width(), a.height()),
            got: format!("{}x{}", b.width(), b.height()),
        });
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB over all channels; identical images give [`PSNR_CAP`].
pub fn psnr(a: &RawImage, b: &RawImage) -> Result<f64> {
    same_dims(a, b)?;
    let sum: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&p, &q)| {
            let d = p as f64 - q as f64;
            d * d
        })
        .sum();
    let mse = sum / a.pixels().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (MAX * MAX / mse).log10()).min(PSNR_CAP))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as i64;
    let taps: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable filter keeping only fully covered windows.
fn filter_valid(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity of two grayscale planes with values in [0, 255].
pub fn ssim_gray(a: &[f64], b: &[f64], width: usize, height: usize) -> Result<f64> {
    if a.len() != width * height || b.len() != a.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{width}x{height} planes"),
            got: format!("{} and {} values", a.len(), b.len()),
        });
    }
    if width < SSIM_WINDOW || height < SSIM_WINDOW {
        return Err(Error::ShapeMismatch {
            expected: format!("at least {SSIM_WINDOW}x{SSIM_WINDOW}"),
            got: format!("{width}x{height}"),
        });
    }
    let taps = gaussian_window();
    let f = |p: &[f64]| filter_valid(p, width, height, &taps);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let (ua, ub) = (f(a), f(b));
    let (uaa, ubb, uab) = (f(&prod(a, a)), f(&prod(b, b)), f(&prod(a, b)));
    let n = ua.len();
    let mut total = 0.0;
    for i in 0..n {
        let va = uaa[i] - ua[i] * ua[i];
        let vb = ubb[i] - ub[i] * ub[i];
        let cov = uab[i] - ua[i] * ub[i];
        let num = (2.0 * ua[i] * ub[i] + SSIM_C1) * (2.0 * cov + SSIM_C2);
        let den = (ua[i] * ua[i] + ub[i] * ub[i] + SSIM_C1) * (va + vb + SSIM_C2);
        total += num / den;
    }
    Ok(total / n as f64)
}

/// SSIM on the BT.601 luma of two RGB images.
pub fn ssim(a: &RawImage, b: &RawImage) -> Result<f64> {
    same_dims(a, b)?;
    ssim_gray(&a.luma(), &b.luma(), a.width(), a.height())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Domain;

    #[test]
    fn psnr_formula() {
        let a = RawImage::filled(8, 8, [0, 0, 0], Domain::Photo).unwrap();
        let b = RawImage::filled(8, 8, [16, 16, 16], Domain::Photo).unwrap();
        let expected = 10.0 * (65025.0f64 / 256.0).log10();
        assert!((psnr(&a, &b).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 24.05).abs() < 0.01);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
    }

    #[test]
    fn ssim_constant_pair_floor() {
        let a = RawImage::filled(16, 16, [0, 0, 0], Domain::Photo).unwrap();
        let b = RawImage::filled(16, 16, [255, 255, 255], Domain::Photo).unwrap();
        let s = ssim(&a, &b).unwrap();
        assert!((s - SSIM_C1 / (65025.0 + SSIM_C1)).abs() < 1e-12);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn window_is_normalized() {
        let taps = gaussian_window();
        assert_eq!(taps.len(), 11);
        assert!((taps.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn shape_errors() {
        let a = RawImage::filled(16, 16, [0, 0, 0], Domain::Photo).unwrap();
        let b = RawImage::filled(16, 12, [0, 0, 0], Domain::Photo).unwrap();
        let tiny = RawImage::filled(8, 8, [0, 0, 0], Domain::Photo).unwrap();
        assert!(psnr(&a, &b).is_err());
        assert!(ssim(&a, &b).is_err());
        assert!(ssim(&tiny, &tiny).is_err());
    }
}
