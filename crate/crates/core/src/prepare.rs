//! Turns a raw dataset into training canvases, a manifest and a landmark cache.
//!
//! Output layout under the prepared directory:
//! `{x,y}/{train,test}/<id>.png` (256x256 canvases, unsharpened),
//! `manifest.json`, `landmarks.json` (keys `x/train/<id>`, 256 frame) and
//! `failures.json` (keys of images without a detected face).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::data::{
    load_and_crop, normalize, resize_to_canvas, scan_dataset, sharpen_high_boost, CropBox,
    DatasetManifest, Domain, RawImage, ScannedDataset, SharpenConfig, Split,
};
use crate::error::{Error, Result};
use crate::landmarks::{
    detect_landmarks, CachedDetector, LandmarkCache, LandmarkDetector, SyntheticFaceDetector,
};

pub const CANVAS_SIZE: usize = 256;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LANDMARKS_FILE: &str = "landmarks.json";
pub const FAILURES_FILE: &str = "failures.json";

/// `x/train/<id>`-style key used across cache, crops and failure lists.
pub fn image_key(domain: Domain, split: Split, id: &str) -> String {
    format!("{}/{}/{id}", domain.dir_name(), split.dir_name())
}

pub fn canvas_path(prepared: &Path, domain: Domain, split: Split, id: &str) -> PathBuf {
    prepared
        .join(domain.dir_name())
        .join(split.dir_name())
        .join(format!("{id}.png"))
}

pub fn load_crops(path: Option<&Path>) -> Result<BTreeMap<String, CropBox>> {
    match path {
        Some(p) => Ok(serde_json::from_slice(&fs::read(p)?)?),
        None => Ok(BTreeMap::new()),
    }
}

pub fn make_detector(cfg: &Config) -> Result<Box<dyn LandmarkDetector>> {
    match cfg.landmark_detector.as_str() {
        "synthetic" => Ok(Box::new(SyntheticFaceDetector::default())),
        "cache" => {
            let path = cfg
                .landmark_model
                .as_ref()
                .ok_or_else(|| Error::Config("landmarks.model is required for the cache detector".into()))?;
            Ok(Box::new(CachedDetector {
                cache: LandmarkCache::load(path)?,
            }))
        }
        other => Err(Error::Config(format!("unknown landmark detector '{other}'"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub manifest: DatasetManifest,
    pub detected: usize,
    pub failures: Vec<String>,
}

/// Cropped and resized canvas for one raw file.
pub fn canvas_for(path: &Path, domain: Domain, crop: Option<CropBox>) -> Result<RawImage> {
    let raw = RawImage::open(path, domain)?;
    resize_to_canvas(&load_and_crop(raw, crop)?, CANVAS_SIZE)
}

fn detect_on_canvas(
    detector: &dyn LandmarkDetector,
    canvas: &RawImage,
    key: &str,
    sharpen: &SharpenConfig,
) -> Result<crate::landmarks::LandmarkSet> {
    let sample = normalize(canvas, key)?;
    let sharpened = sharpen_high_boost(canvas, sharpen)?;
    detect_landmarks(detector, &sample, &sharpened)
}

fn require_training_images(scan: &ScannedDataset, root: &Path) -> Result<()> {
    for (domain, ids) in [(Domain::Photo, &scan.manifest.train_x), (Domain::Portrait, &scan.manifest.train_y)] {
        if ids.is_empty() {
            return Err(Error::Dataset(format!(
                "no training images in {}",
                root.join(domain.dir_name()).join("train").display()
            )));
        }
    }
    Ok(())
}

/// Runs the full preprocessing pass and writes the prepared directory atomically.
pub fn preprocess(cfg: &Config, detector: &dyn LandmarkDetector) -> Result<PreprocessReport> {
    let scan = scan_dataset(&cfg.data_root)?;
    require_training_images(&scan, &cfg.data_root)?;
    let crops = load_crops(cfg.crops.as_deref())?;
    let out = &cfg.prepared_dir;
    let tmp = sibling_tmp(out);
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    let mut cache = LandmarkCache::default();
    let mut failures = Vec::new();
    for ((domain, split, id), path) in &scan.files {
        let key = image_key(*domain, *split, id);
        let canvas = canvas_for(path, *domain, crops.get(&key).copied())?;
        let dest = canvas_path(&tmp, *domain, *split, id);
        fs::create_dir_all(dest.parent().expect("canvas path has a parent"))?;
        canvas.save(&dest)?;
        match detect_on_canvas(detector, &canvas, &key, &cfg.sharpen) {
            Ok(lm) => cache.insert(lm),
            Err(Error::NoFaceDetected(_)) => {
                log::warn!("no face detected in {key}");
                failures.push(key);
            }
            Err(e) => return Err(e),
        }
    }
    let report = PreprocessReport {
        manifest: scan.manifest.clone(),
        detected: cache.len(),
        failures,
    };
    fs::write(tmp.join(MANIFEST_FILE), report.manifest.to_json()?)?;
    fs::write(tmp.join(LANDMARKS_FILE), cache.to_json()?)?;
    fs::write(tmp.join(FAILURES_FILE), serde_json::to_string_pretty(&report.failures)?)?;
    replace_dir(&tmp, out)?;
    Ok(report)
}

/// Detection success count per sharpening setting; `None` means sharpening disabled.
pub fn sharpen_sweep(
    cfg: &Config,
    detector: &dyn LandmarkDetector,
    boosts: &[Option<f64>],
) -> Result<Vec<(Option<f64>, usize, usize)>> {
    let scan = scan_dataset(&cfg.data_root)?;
    let crops = load_crops(cfg.crops.as_deref())?;
    let canvases = scan
        .files
        .iter()
        .map(|((d, s, id), p)| {
            let key = image_key(*d, *s, id);
            Ok((canvas_for(p, *d, crops.get(&key).copied())?, key))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for &boost in boosts {
        let sharpen = match boost {
            Some(a) => SharpenConfig::new(a)?,
            None => SharpenConfig {
                enabled: false,
                ..SharpenConfig::default()
            },
        };
        let mut ok = 0;
        for (canvas, key) in &canvases {
            match detect_on_canvas(detector, canvas, key, &sharpen) {
                Ok(_) => ok += 1,
                Err(Error::NoFaceDetected(_)) => {}
                Err(e) => return Err(e),
            }
        }
        out.push((boost, ok, canvases.len()));
    }
    Ok(out)
}

/// Hidden sibling of `dir` used as the staging area for atomic writes.
pub fn sibling_tmp(dir: &Path) -> PathBuf {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    dir.with_file_name(format!(".{name}.tmp"))
}

/// Moves `tmp` into place at `dest`, replacing any previous contents.
pub fn replace_dir(tmp: &Path, dest: &Path) -> Result<()> {
    if let Some(parent) = dest.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    if dest.exists() {
        let old = dest.with_file_name(format!(
            ".{}.old",
            dest.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
        ));
        if old.exists() {
            fs::remove_dir_all(&old)?;
        }
        fs::rename(dest, &old)?;
        fs::rename(tmp, dest)?;
        fs::remove_dir_all(&old)?;
    } else {
        fs::rename(tmp, dest)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_and_paths() {
        assert_eq!(image_key(Domain::Portrait, Split::Test, "a"), "y/test/a");
        let p = canvas_path(Path::new("/p"), Domain::Photo, Split::Train, "b");
        assert_eq!(p, Path::new("/p/x/train/b.png"));
        assert_eq!(sibling_tmp(Path::new("/r/prep")), Path::new("/r/.prep.tmp"));
    }

    #[test]
    fn replace_dir_swaps_contents() {
        let root = tempfile::tempdir().unwrap();
        let dest = root.path().join("out");
        for round in 0..2 {
            let tmp = sibling_tmp(&dest);
            fs::create_dir_all(&tmp).unwrap();
            fs::write(tmp.join("f"), format!("{round}")).unwrap();
            replace_dir(&tmp, &dest).unwrap();
            assert_eq!(fs::read_to_string(dest.join("f")).unwrap(), format!("{round}"));
            assert!(!tmp.exists());
        }
    }
}
