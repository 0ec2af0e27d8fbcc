use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::trainer::Trainer;
use crate::error::{Error, Result};
use crate::networks::Generator;
use crate::perceptual::FeatureExtractor;
use crate::prepare::{replace_dir, sibling_tmp};

pub const SCHEMA: &str = "gatnet-ckpt/1";
pub const PARAMS_FILE: &str = "params.safetensors";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub schema: String,
    /// Completed epochs; training resumes at this epoch index.
    pub epoch: usize,
    pub step: u64,
    pub adam_g_steps: u64,
    pub adam_d_steps: u64,
    pub config: TrainConfig,
}

fn ckpt_err(dir: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: dir.to_path_buf(),
        reason: reason.into(),
    }
}

/// Writes parameters, spectral vectors and optimizer moments into `dir`
/// through a temporary sibling directory.
pub fn save_checkpoint(trainer: &Trainer, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let mut tensors: HashMap<String, Tensor> = HashMap::new();
    let vars = trainer
        .generator
        .vars()
        .into_iter()
        .chain(trainer.d_x.vars("d_x"))
        .chain(trainer.d_y.vars("d_y"));
    for (name, var) in vars {
        tensors.insert(name, var.as_tensor().clone());
    }
    let extra = trainer
        .d_x
        .spectral_tensors("sn.d_x")
        .into_iter()
        .chain(trainer.d_y.spectral_tensors("sn.d_y"))
        .chain(trainer.opt_g.state_tensors("adam_g"))
        .chain(trainer.opt_d.state_tensors("adam_d"));
    tensors.extend(extra);
    let meta = CheckpointMeta {
        schema: SCHEMA.into(),
        epoch: trainer.epoch,
        step: trainer.step,
        adam_g_steps: trainer.opt_g.steps,
        adam_d_steps: trainer.opt_d.steps,
        config: trainer.cfg.clone(),
    };
    let tmp = sibling_tmp(dir);
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;
    candle_core::safetensors::save(&tensors, tmp.join(PARAMS_FILE))?;
    fs::write(tmp.join(META_FILE), serde_json::to_string_pretty(&meta)?)?;
    replace_dir(&tmp, dir)
}

pub fn read_meta(dir: impl AsRef<Path>) -> Result<CheckpointMeta> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join(META_FILE)).map_err(|e| ckpt_err(dir, format!("cannot read {META_FILE}: {e}")))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| ckpt_err(dir, format!("bad {META_FILE}: {e}")))?;
    if meta.schema != SCHEMA {
        return Err(ckpt_err(dir, format!("schema '{}' is not {SCHEMA}", meta.schema)));
    }
    Ok(meta)
}

fn read_tensors(dir: &Path, device: &Device) -> Result<HashMap<String, Tensor>> {
    let path = dir.join(PARAMS_FILE);
    candle_core::safetensors::load(&path, device).map_err(|e| ckpt_err(dir, format!("cannot read {PARAMS_FILE}: {e}")))
}

fn lookup<'a>(dir: &'a Path, tensors: &'a HashMap<String, Tensor>) -> impl Fn(&str) -> Result<Tensor> + 'a {
    move |name: &str| {
        tensors
            .get(name)
            .cloned()
            .ok_or_else(|| ckpt_err(dir, format!("missing tensor {name}")))
    }
}

fn assign(vars: crate::networks::NamedVars, get: &dyn Fn(&str) -> Result<Tensor>) -> Result<()> {
    for (name, var) in vars {
        let t = get(&name)?;
        if t.dims() != var.dims() {
            return Err(Error::ShapeMismatch {
                expected: format!("{name} {:?}", var.dims()),
                got: format!("{:?}", t.dims()),
            });
        }
        var.set(&t.to_dtype(var.dtype())?)?;
    }
    Ok(())
}

/// Rebuilds a trainer with the exact state stored in `dir`.
pub fn load_trainer(dir: impl AsRef<Path>, extractor: Arc<dyn FeatureExtractor>, device: &Device) -> Result<Trainer> {
    let dir = dir.as_ref();
    let meta = read_meta(dir)?;
    let tensors = read_tensors(dir, device)?;
    let get = lookup(dir, &tensors);
    let dtype = get("g.enc_x.0.weight")?.dtype();
    let mut trainer = Trainer::new(meta.config.clone(), extractor, dtype, device)?;
    assign(trainer.generator.vars(), &get)?;
    assign(trainer.d_x.vars("d_x"), &get)?;
    assign(trainer.d_y.vars("d_y"), &get)?;
    for (prefix, d) in [("sn.d_x", &mut trainer.d_x), ("sn.d_y", &mut trainer.d_y)] {
        for i in 0..d.layers.len() {
            d.set_spectral_tensor(i, 'u', get(&format!("{prefix}.{i}.u"))?)?;
            d.set_spectral_tensor(i, 'v', get(&format!("{prefix}.{i}.v"))?)?;
        }
    }
    trainer.opt_g.load_state("adam_g", &get)?;
    trainer.opt_d.load_state("adam_d", &get)?;
    trainer.opt_g.steps = meta.adam_g_steps;
    trainer.opt_d.steps = meta.adam_d_steps;
    trainer.epoch = meta.epoch;
    trainer.step = meta.step;
    Ok(trainer)
}

/// Loads only the generator, for inference and evaluation.
pub fn load_generator(dir: impl AsRef<Path>, device: &Device) -> Result<(Generator, CheckpointMeta)> {
    let dir = dir.as_ref();
    let meta = read_meta(dir)?;
    let tensors = read_tensors(dir, device)?;
    let get = lookup(dir, &tensors);
    let dtype = get("g.enc_x.0.weight")?.dtype();
    let generator = Generator::new(meta.config.generator, 0, dtype, device)?;
    assign(generator.vars(), &get)?;
    Ok((generator, meta))
}

pub fn checkpoint_dir(run_dir: &Path, epoch: usize) -> PathBuf {
    run_dir.join("checkpoints").join(format!("epoch_{epoch:04}"))
}

/// Checkpoint with the highest epoch under `run_dir`, if any.
pub fn latest_checkpoint(run_dir: impl AsRef<Path>) -> Result<Option<PathBuf>> {
    let root = run_dir.as_ref().join("checkpoints");
    if !root.is_dir() {
        return Ok(None);
    }
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in fs::read_dir(&root)? {
        let path = entry?.path();
        let epoch = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("epoch_"))
            .and_then(|n| n.parse::<usize>().ok());
        if let (Some(e), true) = (epoch, path.join(META_FILE).is_file()) {
            if best.as_ref().is_none_or(|(b, _)| e > *b) {
                best = Some((e, path));
            }
        }
    }
    Ok(best.map(|(_, p)| p))
}

/// Resolves a checkpoint argument: a checkpoint directory or a run directory.
pub fn resolve_checkpoint(path: impl AsRef<Path>) -> Result<PathBuf> {
    let path = path.as_ref();
    if path.join(META_FILE).is_file() {
        return Ok(path.to_path_buf());
    }
    latest_checkpoint(path)?.ok_or_else(|| ckpt_err(path, "no checkpoint found"))
}
