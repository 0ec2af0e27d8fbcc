//! Generator and discriminator objectives.
//!
//! All reductions are per-element means. Image tensors are `(B, 3, H, W)`,
//! masks `(B, 1, H, W)` with values in {0, 1}.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landmarks::MaskBundle;
use crate::networks::ops::scalar_f64;
use crate::perceptual::{gram_batch, FeatureExtractor, Layer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub cycle: f64,
    pub land: f64,
    pub head: f64,
    pub style: f64,
    pub content: f64,
    /// Weight of the least-squares term pushing fakes towards "real"; 0 disables it.
    pub adversarial: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            cycle: 50.0,
            land: 0.2,
            head: 0.5,
            style: 1.0,
            content: 0.1,
            adversarial: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.cycle, self.land, self.head, self.style, self.content, self.adversarial];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", a.dims()),
            got: format!("{:?}", b.dims()),
        });
    }
    Ok(())
}

pub fn mean_abs(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b)?;
    Ok((a - b)?.abs()?.mean_all()?)
}

pub fn mean_sq(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b)?;
    Ok((a - b)?.sqr()?.mean_all()?)
}

/// `mean|x_x - x| + mean|y_y - y|`.
pub fn cycle_loss(x: &Tensor, y: &Tensor, x_x: &Tensor, y_y: &Tensor) -> Result<Tensor> {
    Ok((mean_abs(x_x, x)? + mean_abs(y_y, y)?)?)
}

/// L1 over the mask's support, averaged over masked pixels and channels.
///
/// An empty mask yields an exact zero.
pub fn masked_l1(a: &Tensor, b: &Tensor, mask: &Tensor) -> Result<Tensor> {
    same_shape(a, b)?;
    let (n, c, h, w) = a.dims4()?;
    if mask.dims() != [n, 1, h, w] {
        return Err(Error::ShapeMismatch {
            expected: format!("mask [{n}, 1, {h}, {w}]"),
            got: format!("{:?}", mask.dims()),
        });
    }
    let support = scalar_f64(&mask.sum_all()?)?;
    if support == 0.0 {
        log::debug!("empty mask; masked term contributes 0");
        return Ok(Tensor::zeros((), a.dtype(), a.device())?);
    }
    let diff = (a - b)?.abs()?.broadcast_mul(mask)?.sum_all()?;
    Ok((diff / (support * c as f64))?)
}

/// Mask tensors for one batch, stacked from per-sample bundles.
#[derive(Debug, Clone)]
pub struct MaskTensors {
    pub eye: Tensor,
    pub nose: Tensor,
    pub lip: Tensor,
    pub head: Tensor,
}

impl MaskTensors {
    pub fn stack(bundles: &[&MaskBundle], dtype: DType, device: &Device) -> Result<Self> {
        let field = |f: &dyn Fn(&MaskBundle) -> &crate::landmarks::Mask| -> Result<Tensor> {
            let parts = bundles
                .iter()
                .map(|b| f(b).to_tensor(dtype, device))
                .collect::<Result<Vec<_>>>()?;
            Ok(Tensor::cat(&parts, 0)?)
        };
        Ok(Self {
            eye: field(&|b| &b.eye)?,
            nose: field(&|b| &b.nose)?,
            lip: field(&|b| &b.lip)?,
            head: field(&|b| &b.head)?,
        })
    }
}

/// Per-component land terms; `total` is their sum.
#[derive(Debug, Clone)]
pub struct LandTerms<T> {
    pub eye: T,
    pub nose: T,
    pub lip: T,
    pub total: T,
}

/// Keeps eyes, nose and lips of each fake equal to those of its content image.
pub fn land_loss(
    x_y: &Tensor,
    x: &Tensor,
    y_x: &Tensor,
    y: &Tensor,
    masks_x: &MaskTensors,
    masks_y: &MaskTensors,
) -> Result<LandTerms<Tensor>> {
    let term = |mx: &Tensor, my: &Tensor| -> Result<Tensor> {
        Ok((masked_l1(x_y, x, mx)? + masked_l1(y_x, y, my)?)?)
    };
    let eye = term(&masks_x.eye, &masks_y.eye)?;
    let nose = term(&masks_x.nose, &masks_y.nose)?;
    let lip = term(&masks_x.lip, &masks_y.lip)?;
    let total = ((&eye + &nose)? + &lip)?;
    Ok(LandTerms { eye, nose, lip, total })
}

/// Transfers the band above the eyebrows: `x_y` towards `y` under `m_ht`
/// (from `y`'s landmarks), `y_x` towards `x` under `m_hr` (from `x`'s).
pub fn head_loss(x_y: &Tensor, y: &Tensor, y_x: &Tensor, x: &Tensor, m_ht: &Tensor, m_hr: &Tensor) -> Result<Tensor> {
    Ok((masked_l1(x_y, y, m_ht)? + masked_l1(y_x, x, m_hr)?)?)
}

/// `Σ_layers 1/(4N²M²) Σ (G(a) - G(b))²`, summed over the pairs and averaged over the batch.
pub fn style_loss_from_features(pairs: &[(&Tensor, &Tensor)]) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    for (a, b) in pairs {
        same_shape(a, b)?;
        let (n, c, h, w) = a.dims4()?;
        let m = (h * w) as f64;
        let norm = 4.0 * (c as f64).powi(2) * m * m * n as f64;
        let term = ((gram_batch(a)? - gram_batch(b)?)?.sqr()?.sum_all()? / norm)?;
        total = Some(match total {
            Some(t) => (t + term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::Config("style loss needs at least one layer".into()))
}

/// Gram-matrix style distance of `x_y` to `y` and `y_x` to `x` at `layers`.
pub fn style_loss(
    extractor: &dyn FeatureExtractor,
    x_y: &Tensor,
    y: &Tensor,
    y_x: &Tensor,
    x: &Tensor,
    layers: &[Layer],
) -> Result<Tensor> {
    let fxy = extractor.extract(x_y, layers)?;
    let fy = extractor.extract(&y.detach(), layers)?;
    let fyx = extractor.extract(y_x, layers)?;
    let fx = extractor.extract(&x.detach(), layers)?;
    let mut pairs = Vec::new();
    for i in 0..layers.len() {
        pairs.push((&fxy[i], &fy[i]));
        pairs.push((&fyx[i], &fx[i]));
    }
    style_loss_from_features(&pairs)
}

/// Sum over the pairs of the feature-map mean squared error.
pub fn content_loss_from_features(pairs: &[(&Tensor, &Tensor)]) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    for (a, b) in pairs {
        let term = mean_sq(a, b)?;
        total = Some(match total {
            Some(t) => (t + term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::Config("content loss needs at least one layer".into()))
}

/// Feature distance of `x_y` to `x` and `y_x` to `y` at `layers`.
pub fn content_loss(
    extractor: &dyn FeatureExtractor,
    x_y: &Tensor,
    x: &Tensor,
    y_x: &Tensor,
    y: &Tensor,
    layers: &[Layer],
) -> Result<Tensor> {
    let fxy = extractor.extract(x_y, layers)?;
    let fx = extractor.extract(&x.detach(), layers)?;
    let fyx = extractor.extract(y_x, layers)?;
    let fy = extractor.extract(&y.detach(), layers)?;
    let mut pairs = Vec::new();
    for i in 0..layers.len() {
        pairs.push((&fxy[i], &fx[i]));
        pairs.push((&fyx[i], &fy[i]));
    }
    content_loss_from_features(&pairs)
}

fn mean_sq_to(t: &Tensor, target: f64) -> Result<Tensor> {
    Ok(t.affine(1.0, -target)?.sqr()?.mean_all()?)
}

/// `mean (D_x(x_y) - 1)² + mean (D_y(y_x) - 1)²`.
pub fn adversarial_g(d_x_on_x_y: &Tensor, d_y_on_y_x: &Tensor) -> Result<Tensor> {
    Ok((mean_sq_to(d_x_on_x_y, 1.0)? + mean_sq_to(d_y_on_y_x, 1.0)?)?)
}

/// Least-squares discriminator objective over both discriminators.
pub fn discriminator_loss(
    d_x_on_y: &Tensor,
    d_x_on_x_y: &Tensor,
    d_y_on_x: &Tensor,
    d_y_on_y_x: &Tensor,
) -> Result<Tensor> {
    let dx = (mean_sq_to(d_x_on_y, 1.0)? + mean_sq_to(d_x_on_x_y, 0.0)?)?;
    let dy = (mean_sq_to(d_y_on_x, 1.0)? + mean_sq_to(d_y_on_y_x, 0.0)?)?;
    Ok((dx + dy)?)
}

/// Generator loss terms; `None` marks a disabled term.
#[derive(Debug, Clone)]
pub struct LossParts<T> {
    pub cycle: T,
    pub land: Option<T>,
    pub head: Option<T>,
    pub style: Option<T>,
    pub content: Option<T>,
    pub adversarial: Option<T>,
}

impl<T> LossParts<T> {
    fn weighted<'a>(&'a self, w: &LossWeights) -> impl Iterator<Item = (f64, &'a T)> {
        [
            (w.cycle, Some(&self.cycle)),
            (w.land, self.land.as_ref()),
            (w.head, self.head.as_ref()),
            (w.style, self.style.as_ref()),
            (w.content, self.content.as_ref()),
            (w.adversarial, self.adversarial.as_ref()),
        ]
        .into_iter()
        .filter_map(|(k, t)| t.map(|t| (k, t)))
    }
}

/// `λ_cy L_cy + λ_l L_l + λ_h L_h + λ_s L_s + λ_c L_c (+ λ_adv L_adv)`.
pub fn generator_total(parts: &LossParts<f64>, w: &LossWeights) -> f64 {
    parts.weighted(w).map(|(k, v)| k * v).sum()
}

pub fn generator_total_tensor(parts: &LossParts<Tensor>, w: &LossWeights) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    for (k, t) in parts.weighted(w) {
        let term = (t * k)?;
        total = Some(match total {
            Some(acc) => (acc + term)?,
            None => term,
        });
    }
    Ok(total.expect("cycle term is always present"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandReport {
    pub eye: f64,
    pub nose: f64,
    pub lip: f64,
    pub total: f64,
}

/// Scalar values of one step's losses. Disabled terms are `None` and omitted from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub cycle: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub land: Option<LandReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversarial_g: Option<f64>,
    pub generator_total: f64,
    pub discriminator_total: f64,
}

impl LossReport {
    pub fn parts(&self) -> LossParts<f64> {
        LossParts {
            cycle: self.cycle,
            land: self.land.map(|l| l.total),
            head: self.head,
            style: self.style,
            content: self.content,
            adversarial: self.adversarial_g,
        }
    }

    /// Recomputes the weighted generator sum from the stored parts.
    pub fn weighted_sum(&self, w: &LossWeights) -> f64 {
        generator_total(&self.parts(), w)
    }

    pub fn head_value(&self) -> f64 {
        self.head.unwrap_or(0.0)
    }

    pub fn is_finite(&self) -> bool {
        let p = self.parts();
        let opt = [p.land, p.head, p.style, p.content, p.adversarial];
        self.cycle.is_finite()
            && self.generator_total.is_finite()
            && self.discriminator_total.is_finite()
            && opt.iter().flatten().all(|v| v.is_finite())
    }

    /// Element-wise mean of several reports; a term is kept if any report has it.
    pub fn mean(reports: &[LossReport]) -> Option<LossReport> {
        let n = reports.len();
        if n == 0 {
            return None;
        }
        let avg = |f: &dyn Fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() / n as f64;
        let avg_opt = |f: &dyn Fn(&LossReport) -> Option<f64>| {
            reports.iter().any(|r| f(r).is_some()).then(|| avg(&|r| f(r).unwrap_or(0.0)))
        };
        let land = reports.iter().any(|r| r.land.is_some()).then(|| {
            let part = |g: &dyn Fn(&LandReport) -> f64| avg(&|r| r.land.as_ref().map(g).unwrap_or(0.0));
            LandReport {
                eye: part(&|l| l.eye),
                nose: part(&|l| l.nose),
                lip: part(&|l| l.lip),
                total: part(&|l| l.total),
            }
        });
        Some(LossReport {
            cycle: avg(&|r| r.cycle),
            land,
            head: avg_opt(&|r| r.head),
            style: avg_opt(&|r| r.style),
            content: avg_opt(&|r| r.content),
            adversarial_g: avg_opt(&|r| r.adversarial_g),
            generator_total: avg(&|r| r.generator_total),
            discriminator_total: avg(&|r| r.discriminator_total),
        })
    }
}
