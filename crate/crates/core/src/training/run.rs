use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use candle_core::{DType, Device};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{checkpoint_dir, latest_checkpoint, load_trainer, save_checkpoint};
use super::config::{AblationFlag, TrainConfig};
use super::dataset::{epoch_batches, make_batch, DomainPair};
use super::schedule::lr_schedule;
use super::trainer::{StepOutcome, Trainer};
use crate::error::Result;
use crate::losses::LossReport;
use crate::networks::ops::derive_seed;
use crate::perceptual::FeatureExtractor;

pub const STEP_LOG: &str = "train_log.jsonl";
pub const EPOCH_LOG: &str = "epochs.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: usize,
    pub lr: f64,
    pub seconds: f64,
    pub mean: LossReport,
}

#[derive(Debug, Serialize)]
struct StepRecord<'a> {
    epoch: usize,
    step: u64,
    lr: f64,
    #[serde(flatten)]
    report: &'a LossReport,
}

#[derive(Debug, Clone, Default)]
pub struct LoopOptions {
    /// Stop after this many epochs in the current call (the run can be resumed later).
    pub stop_after: Option<usize>,
}

fn append(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?))
}

/// Runs epochs `trainer.epoch..cfg.epochs`, logging every step and epoch and
/// checkpointing every `checkpoint_every` epochs plus at the end.
pub fn train_loop(trainer: &mut Trainer, data: &DomainPair, run_dir: impl AsRef<Path>, opts: &LoopOptions) -> Result<Vec<EpochStats>> {
    train_loop_with(trainer, data, run_dir, opts, &mut |_, _| {})
}

/// [`train_loop`] with a hook called after every step with the step number (1-based).
pub fn train_loop_with(
    trainer: &mut Trainer,
    data: &DomainPair,
    run_dir: impl AsRef<Path>,
    opts: &LoopOptions,
    on_step: &mut dyn FnMut(u64, &StepOutcome),
) -> Result<Vec<EpochStats>> {
    data.require_nonempty()?;
    let run_dir = run_dir.as_ref();
    fs::create_dir_all(run_dir)?;
    fs::write(run_dir.join("train_config.json"), serde_json::to_string_pretty(&trainer.cfg)?)?;
    let mut step_log = append(&run_dir.join(STEP_LOG))?;
    let mut epoch_log = append(&run_dir.join(EPOCH_LOG))?;
    let cfg = trainer.cfg.clone();
    let mut stats = Vec::new();
    let end = match opts.stop_after {
        Some(n) => (trainer.epoch + n).min(cfg.epochs),
        None => cfg.epochs,
    };
    while trainer.epoch < end {
        let epoch = trainer.epoch;
        let lr = lr_schedule(epoch, &cfg)?;
        let started = Instant::now();
        let batches = epoch_batches(data.x.len(), data.y.len(), cfg.batch_size, cfg.seed, epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("augment{epoch}")));
        let mut reports = Vec::with_capacity(batches.len());
        for pairs in &batches {
            let batch = make_batch(data, pairs, Some((&cfg.augment, &mut rng)), trainer.dtype, &trainer.device)?;
            let outcome = trainer.train_step(&batch, lr)?;
            on_step(trainer.step, &outcome);
            let record = StepRecord {
                epoch,
                step: trainer.step,
                lr,
                report: &outcome.report,
            };
            serde_json::to_writer(&mut step_log, &record)?;
            step_log.write_all(b"\n")?;
            reports.push(outcome.report);
        }
        trainer.epoch += 1;
        let epoch_stats = EpochStats {
            epoch,
            steps: reports.len(),
            lr,
            seconds: started.elapsed().as_secs_f64(),
            mean: LossReport::mean(&reports).expect("at least one batch per epoch"),
        };
        serde_json::to_writer(&mut epoch_log, &epoch_stats)?;
        epoch_log.write_all(b"\n")?;
        step_log.flush()?;
        epoch_log.flush()?;
        log::info!(
            "epoch {}/{} lr {:.2e} G {:.4} D {:.4} ({:.1}s)",
            epoch + 1,
            cfg.epochs,
            lr,
            epoch_stats.mean.generator_total,
            epoch_stats.mean.discriminator_total,
            epoch_stats.seconds
        );
        let done = trainer.epoch == cfg.epochs;
        if done || (cfg.checkpoint_every > 0 && trainer.epoch % cfg.checkpoint_every == 0) {
            save_checkpoint(trainer, checkpoint_dir(run_dir, trainer.epoch))?;
        }
        stats.push(epoch_stats);
    }
    Ok(stats)
}

/// Loads the latest checkpoint under `run_dir` if `resume` is set and one exists,
/// otherwise builds a fresh trainer.
pub fn resume_or_new(
    cfg: &TrainConfig,
    run_dir: impl AsRef<Path>,
    resume: bool,
    extractor: Arc<dyn FeatureExtractor>,
    device: &Device,
) -> Result<Trainer> {
    if resume {
        if let Some(dir) = latest_checkpoint(run_dir)? {
            log::info!("resuming from {}", dir.display());
            return load_trainer(dir, extractor, device);
        }
    }
    Trainer::new(cfg.clone(), extractor, DType::F32, device)
}

/// The five ablation configurations: one per dropped term, then the full loss.
pub fn ablation_variants(base: &TrainConfig) -> Vec<(String, TrainConfig)> {
    let mut clean = base.clone();
    clean.ablation.clear();
    let mut out: Vec<(String, TrainConfig)> = AblationFlag::ALL
        .iter()
        .map(|&flag| {
            let mut cfg = clean.clone();
            cfg.ablation.insert(flag);
            (flag.variant_label().to_string(), cfg)
        })
        .collect();
    out.push(("L_Total".into(), clean));
    out
}

/// Trains every ablation variant under `root/<label>` with the shared seed and data.
pub fn run_ablation_suite(
    base: &TrainConfig,
    data: &DomainPair,
    root: impl AsRef<Path>,
    resume: bool,
    extractor: Arc<dyn FeatureExtractor>,
    device: &Device,
) -> Result<Vec<(String, PathBuf)>> {
    let root = root.as_ref();
    let mut dirs = Vec::new();
    for (label, cfg) in ablation_variants(base) {
        let dir = root.join(&label);
        log::info!("ablation variant {label}");
        let mut trainer = resume_or_new(&cfg, &dir, resume, extractor.clone(), device)?;
        train_loop(&mut trainer, data, &dir, &LoopOptions::default())?;
        dirs.push((label, dir));
    }
    Ok(dirs)
}
