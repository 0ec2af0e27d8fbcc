//! Toy end-to-end run: synthetic data, preprocessing, a short training run,
//! inference and evaluation, followed by pass/fail checks.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::data::Split;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_testset, stylize_files, EvalOptions, EvaluationSummary};
use crate::perceptual::Vgg16;
use crate::prepare::{canvas_path, make_detector, preprocess};
use crate::synthetic::{write_dataset, SyntheticCounts, CROPS_FILE};
use crate::training::{
    checkpoint_dir, load_generator, train_loop_with, DomainPair, EpochStats, LoopOptions, Trainer,
};

pub const SMOKE_PAIRS: usize = 8;
pub const SMOKE_TEST_PAIRS: usize = 2;
pub const SMOKE_IMAGE_SIZE: usize = 64;
pub const SMOKE_EPOCHS: usize = 30;
/// Final-epoch mean generator loss must be at most this fraction of the first epoch's.
pub const SMOKE_LOSS_RATIO: f64 = 0.7;
/// Wall-clock limit for the whole run on one CPU core.
pub const SMOKE_BUDGET_SECS: f64 = 3600.0;

/// Config for a smoke run rooted at `root`; file settings and overrides go on top.
pub fn smoke_config(root: &Path) -> Config {
    let mut cfg = Config::default();
    cfg.data_root = root.join("raw");
    cfg.crops = Some(root.join("raw").join(CROPS_FILE));
    cfg.prepared_dir = root.join("prepared");
    cfg.run_dir = root.join("run");
    cfg.eval_dir = root.join("eval");
    cfg.train.image_size = SMOKE_IMAGE_SIZE;
    cfg.train.epochs = SMOKE_EPOCHS;
    cfg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmokeCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmokeReport {
    pub epochs: Vec<EpochStats>,
    pub loss_ratio: f64,
    pub generator_params: usize,
    /// Generator parameters whose gradient norm was zero at the first step.
    pub params_without_grad: Vec<String>,
    pub checkpoint_bitwise: bool,
    pub inferred: PathBuf,
    pub evaluation: EvaluationSummary,
    pub seconds: f64,
}

impl SmokeReport {
    pub fn checks(&self) -> Vec<SmokeCheck> {
        let check = |name: &str, passed: bool, detail: String| SmokeCheck {
            name: name.to_string(),
            passed,
            detail,
        };
        let first = self.epochs.first().map(|e| e.mean.generator_total).unwrap_or(f64::NAN);
        let last = self.epochs.last().map(|e| e.mean.generator_total).unwrap_or(f64::NAN);
        let eval_ok = self.evaluation.skipped.is_empty()
            && self.evaluation.variants.iter().all(|v| {
                v.pairs > 0 && [v.p_content, v.p_style, v.s_content, v.s_style].iter().all(|x| x.is_finite())
            });
        vec![
            check(
                "loss_decrease",
                self.loss_ratio <= SMOKE_LOSS_RATIO,
                format!("final/first = {last:.4}/{first:.4} = {:.4} (limit {SMOKE_LOSS_RATIO})", self.loss_ratio),
            ),
            check(
                "gradient_flow",
                self.generator_params > 0 && self.params_without_grad.is_empty(),
                format!(
                    "{} of {} generator parameters without gradient at step 1",
                    self.params_without_grad.len(),
                    self.generator_params
                ),
            ),
            check(
                "checkpoint_round_trip",
                self.checkpoint_bitwise,
                "reloaded generator reproduces the trained forward pass bit for bit".into(),
            ),
            check("evaluation", eval_ok, format!("{} variant(s) scored", self.evaluation.variants.len())),
            check(
                "runtime",
                self.seconds <= SMOKE_BUDGET_SECS,
                format!("{:.0}s (limit {SMOKE_BUDGET_SECS:.0}s)", self.seconds),
            ),
        ]
    }

    pub fn passed(&self) -> bool {
        self.checks().iter().all(|c| c.passed)
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })
}

fn bits(t: &Tensor) -> Result<Vec<u32>> {
    Ok(t.flatten_all()?
        .to_dtype(DType::F32)?
        .to_vec1::<f32>()?
        .into_iter()
        .map(f32::to_bits)
        .collect())
}

/// Runs the full toy pipeline under the directories named in `cfg`.
///
/// The synthetic dataset is generated from `cfg.train.seed`, so a seed override
/// changes both data and initialization.
pub fn run_smoke(cfg: &Config) -> Result<SmokeReport> {
    let started = Instant::now();
    stage("config", cfg.validate())?;
    let device = Device::Cpu;
    let t = &cfg.train;

    stage("generate", (|| {
        if cfg.data_root.exists() {
            fs::remove_dir_all(&cfg.data_root)?;
        }
        write_dataset(&cfg.data_root, SyntheticCounts::pairs(SMOKE_PAIRS, SMOKE_TEST_PAIRS), t.seed)
    })())?;
    log::info!("generated synthetic dataset in {}", cfg.data_root.display());

    let report = stage("preprocess", make_detector(cfg).and_then(|d| preprocess(cfg, d.as_ref())))?;
    log::info!("preprocessed {:?}, {} without a face", report.manifest.counts, report.failures.len());

    let (stats, params_without_grad, generator_params, trainer) = stage("train", (|| {
        let data = DomainPair::load(&cfg.prepared_dir, Split::Train, t.image_size, cfg.mask_dilation)?;
        let vgg = Vgg16::load_or_seeded(cfg.vgg_weights.as_deref(), t.seed, DType::F32, &device)?;
        if cfg.run_dir.exists() {
            fs::remove_dir_all(&cfg.run_dir)?;
        }
        let mut trainer = Trainer::new(t.clone(), Arc::new(vgg), DType::F32, &device)?;
        let mut first: Option<Vec<(String, f64)>> = None;
        let stats = train_loop_with(&mut trainer, &data, &cfg.run_dir, &LoopOptions::default(), &mut |step, out| {
            if step == 1 {
                first = Some(out.generator_grad_norms.clone());
            }
        })?;
        let first = first.unwrap_or_default();
        let missing = first.iter().filter(|(_, n)| !(*n > 0.0)).map(|(k, _)| k.clone()).collect();
        Ok((stats, missing, first.len(), trainer))
    })())?;

    let (inferred, checkpoint_bitwise) = stage("infer", (|| {
        let ckpt = checkpoint_dir(&cfg.run_dir, trainer.epoch);
        let (loaded, _) = load_generator(&ckpt, &device)?;
        let test = DomainPair::load(&cfg.prepared_dir, Split::Test, t.image_size, cfg.mask_dilation)?;
        let (x, y) = (&test.x[0].sample, &test.y[0].sample);
        let (xt, yt) = (x.to_tensor(DType::F32, &device)?, y.to_tensor(DType::F32, &device)?);
        let a = trainer.generator.infer(&xt, &yt)?;
        let b = loaded.infer(&xt, &yt)?;
        let same = bits(&a.x_y)? == bits(&b.x_y)? && bits(&a.y_x)? == bits(&b.y_x)?;
        let content = canvas_path(&cfg.prepared_dir, crate::data::Domain::Photo, Split::Test, &x.id);
        let style = canvas_path(&cfg.prepared_dir, crate::data::Domain::Portrait, Split::Test, &y.id);
        let image = stylize_files(&loaded, t.image_size, &content, &style)?;
        let out = cfg.run_dir.join("infer").join(format!("{}__{}.png", x.id, y.id));
        fs::create_dir_all(out.parent().expect("has parent"))?;
        image.save(&out)?;
        Ok((out, same))
    })())?;

    let evaluation = stage(
        "evaluate",
        evaluate_testset(
            &[(t.variant_label(), cfg.run_dir.clone())],
            &cfg.prepared_dir,
            &cfg.eval_dir,
            &EvalOptions {
                max_pairs: None,
                save_images: true,
                dilation: cfg.mask_dilation,
            },
        ),
    )?;

    let first = stats.first().map(|s| s.mean.generator_total).unwrap_or(f64::NAN);
    let last = stats.last().map(|s| s.mean.generator_total).unwrap_or(f64::NAN);
    Ok(SmokeReport {
        loss_ratio: last / first,
        epochs: stats,
        generator_params,
        params_without_grad,
        checkpoint_bitwise,
        inferred,
        evaluation,
        seconds: started.elapsed().as_secs_f64(),
    })
}
