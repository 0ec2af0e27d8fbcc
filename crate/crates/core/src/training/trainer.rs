use std::sync::Arc;

use candle_core::{DType, Device, Tensor};

use super::adam::Adam;
use super::config::{AblationFlag, TrainConfig};
use super::dataset::Batch;
use crate::error::{Error, Result};
use crate::losses::{
    adversarial_g, content_loss_from_features, cycle_loss, discriminator_loss,
    generator_total_tensor, head_loss, land_loss, LandReport, LossParts, LossReport,
    style_loss_from_features,
};
use crate::networks::ops::{derive_seed, scalar_f64};
use crate::networks::{Discriminator, Generator};
use crate::perceptual::{FeatureExtractor, Layer};

/// Generator, both discriminators and their optimizers.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub generator: Generator,
    pub d_x: Discriminator,
    pub d_y: Discriminator,
    pub extractor: Arc<dyn FeatureExtractor>,
    pub(crate) opt_g: Adam,
    pub(crate) opt_d: Adam,
    /// Index of the next epoch to run.
    pub epoch: usize,
    pub step: u64,
    pub dtype: DType,
    pub device: Device,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub report: LossReport,
    /// L2 norm of the generator-loss gradient for each generator parameter.
    pub generator_grad_norms: Vec<(String, f64)>,
}

fn as_refs(v: &[(Tensor, Tensor)]) -> Vec<(&Tensor, &Tensor)> {
    v.iter().map(|(a, b)| (a, b)).collect()
}

fn checked(value: f64, loss: &'static str, batch: &Batch) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFiniteLoss {
            loss,
            ids: batch.ids.clone(),
        })
    }
}

impl Trainer {
    /// Fresh networks initialized from `cfg.seed`.
    pub fn new(cfg: TrainConfig, extractor: Arc<dyn FeatureExtractor>, dtype: DType, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let generator = Generator::new(cfg.generator, derive_seed(cfg.seed, "generator"), dtype, device)?;
        let d_x = Discriminator::new(cfg.discriminator, derive_seed(cfg.seed, "d_x"), dtype, device)?;
        let d_y = Discriminator::new(cfg.discriminator, derive_seed(cfg.seed, "d_y"), dtype, device)?;
        let opt_g = Adam::new(generator.vars(), cfg.beta1, cfg.beta2)?;
        let mut d_vars = d_x.vars("d_x");
        d_vars.extend(d_y.vars("d_y"));
        let opt_d = Adam::new(d_vars, cfg.beta1, cfg.beta2)?;
        Ok(Self {
            cfg,
            generator,
            d_x,
            d_y,
            extractor,
            opt_g,
            opt_d,
            epoch: 0,
            step: 0,
            dtype,
            device: device.clone(),
        })
    }

    fn perceptual_layers(&self) -> (Vec<Layer>, Vec<Layer>) {
        let style = if self.cfg.uses(AblationFlag::DropStyle) {
            self.cfg.style_layers.clone()
        } else {
            Vec::new()
        };
        let content = if self.cfg.uses(AblationFlag::DropContent) {
            self.cfg.content_layers.clone()
        } else {
            Vec::new()
        };
        (style, content)
    }

    /// One discriminator update followed by one generator update.
    pub fn train_step(&mut self, batch: &Batch, lr: f64) -> Result<StepOutcome> {
        let (x, y) = (&batch.x, &batch.y);
        let b = x.dim(0)?;
        let out = self.generator.forward(x, y)?;
        let (x_y, y_x) = (&out.x_y, &out.y_x);

        // discriminator update on detached fakes; power iteration advances here only
        let (xy_d, yx_d) = (x_y.detach(), y_x.detach());
        let loss_d = discriminator_loss(
            &self.d_x.forward(y, 1)?,
            &self.d_x.forward(&xy_d, 0)?,
            &self.d_y.forward(x, 1)?,
            &self.d_y.forward(&yx_d, 0)?,
        )?;
        let d_total = checked(scalar_f64(&loss_d)?, "discriminator_total", batch)?;
        let grads_d = loss_d.backward()?;
        self.opt_d.step(&grads_d, lr)?;

        // generator update
        let cycled = self.generator.forward(x_y, y_x)?;
        let cycle = cycle_loss(x, y, &cycled.x_y, &cycled.y_x)?;
        let land = if self.cfg.uses(AblationFlag::DropLand) {
            Some(land_loss(x_y, x, y_x, y, &batch.masks_x, &batch.masks_y)?)
        } else {
            None
        };
        let head = if self.cfg.uses(AblationFlag::DropHead) {
            Some(head_loss(x_y, y, y_x, x, &batch.masks_y.head, &batch.masks_x.head)?)
        } else {
            None
        };
        let (style_layers, content_layers) = self.perceptual_layers();
        let (style, content) = if style_layers.is_empty() && content_layers.is_empty() {
            (None, None)
        } else {
            let mut layers: Vec<Layer> = style_layers.iter().chain(&content_layers).copied().collect();
            layers.sort();
            layers.dedup();
            let fake = Tensor::cat(&[x_y, y_x], 0)?;
            let real = Tensor::cat(&[x, y], 0)?.detach();
            let ff = self.extractor.extract(&fake, &layers)?;
            let fr: Vec<Tensor> = self.extractor.extract(&real, &layers)?.iter().map(|t| t.detach()).collect();
            let halves = |t: &Tensor| -> Result<(Tensor, Tensor)> { Ok((t.narrow(0, 0, b)?, t.narrow(0, b, b)?)) };
            let pos = |l: &Layer| layers.iter().position(|m| m == l).expect("layer was requested");
            let mut style_pairs = Vec::new();
            for l in &style_layers {
                let (fxy, fyx) = halves(&ff[pos(l)])?;
                let (fx, fy) = halves(&fr[pos(l)])?;
                style_pairs.push((fxy, fy));
                style_pairs.push((fyx, fx));
            }
            let mut content_pairs = Vec::new();
            for l in &content_layers {
                let (fxy, fyx) = halves(&ff[pos(l)])?;
                let (fx, fy) = halves(&fr[pos(l)])?;
                content_pairs.push((fxy, fx));
                content_pairs.push((fyx, fy));
            }
            let style = (!style_pairs.is_empty())
                .then(|| style_loss_from_features(&as_refs(&style_pairs)))
                .transpose()?;
            let content = (!content_pairs.is_empty())
                .then(|| content_loss_from_features(&as_refs(&content_pairs)))
                .transpose()?;
            (style, content)
        };
        let adversarial = if self.cfg.weights.adversarial > 0.0 {
            Some(adversarial_g(&self.d_x.forward(x_y, 0)?, &self.d_y.forward(y_x, 0)?)?)
        } else {
            None
        };
        let parts = LossParts {
            cycle,
            land: land.as_ref().map(|l| l.total.clone()),
            head,
            style,
            content,
            adversarial,
        };
        let total = generator_total_tensor(&parts, &self.cfg.weights)?;
        let g_total = checked(scalar_f64(&total)?, "generator_total", batch)?;
        let grads_g = total.backward()?;
        let mut generator_grad_norms = Vec::new();
        for (name, var) in self.opt_g.vars() {
            let norm = match grads_g.get(var.as_tensor()) {
                Some(g) => scalar_f64(&g.sqr()?.sum_all()?)?.sqrt(),
                None => 0.0,
            };
            generator_grad_norms.push((name.clone(), norm));
        }
        self.opt_g.step(&grads_g, lr)?;
        self.step += 1;

        let opt = |t: &Option<Tensor>| t.as_ref().map(scalar_f64).transpose();
        let land = match &land {
            Some(l) => Some(LandReport {
                eye: scalar_f64(&l.eye)?,
                nose: scalar_f64(&l.nose)?,
                lip: scalar_f64(&l.lip)?,
                total: scalar_f64(&l.total)?,
            }),
            None => None,
        };
        let report = LossReport {
            cycle: scalar_f64(&parts.cycle)?,
            land,
            head: opt(&parts.head)?,
            style: opt(&parts.style)?,
            content: opt(&parts.content)?,
            adversarial_g: opt(&parts.adversarial)?,
            generator_total: g_total,
            discriminator_total: d_total,
        };
        Ok(StepOutcome {
            report,
            generator_grad_norms,
        })
    }
}
