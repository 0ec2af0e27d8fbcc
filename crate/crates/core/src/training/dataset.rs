use std::collections::BTreeSet;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::AugmentConfig;
use crate::data::{
    augment, normalize, resize_to_canvas, Augmentation, DatasetManifest, Domain, ImageSample,
    RawImage, Split,
};
use crate::error::{Error, Result};
use crate::landmarks::{LandmarkCache, MaskBundle, MaskSource};
use crate::losses::MaskTensors;
use crate::networks::ops::derive_seed;
use crate::prepare::{canvas_path, image_key, CANVAS_SIZE, LANDMARKS_FILE, MANIFEST_FILE};

/// One prepared image with its masks at the training size.
#[derive(Debug, Clone)]
pub struct Item {
    pub sample: ImageSample,
    pub masks: MaskBundle,
    pub has_face: bool,
}

/// Both domains of one split, resized to the training canvas.
#[derive(Debug, Clone)]
pub struct DomainPair {
    pub x: Vec<Item>,
    pub y: Vec<Item>,
    pub size: usize,
}

fn load_item(
    prepared: &Path,
    domain: Domain,
    split: Split,
    id: &str,
    cache: &LandmarkCache,
    size: usize,
    dilation: usize,
) -> Result<Item> {
    let canvas = RawImage::open(canvas_path(prepared, domain, split, id), domain)?;
    let canvas = if canvas.width() == size && canvas.height() == size {
        canvas
    } else {
        resize_to_canvas(&canvas, size)?
    };
    let key = image_key(domain, split, id);
    let sample = normalize(&canvas, id)?;
    let source = match domain {
        Domain::Photo => MaskSource::ContentX,
        Domain::Portrait => MaskSource::StyleY,
    };
    let (masks, has_face) = match cache.get(&key) {
        Some(lm) => {
            let lm = lm.rescaled(size as f32 / CANVAS_SIZE as f32).clamped(size);
            (MaskBundle::from_landmarks(&lm, size, dilation, source), true)
        }
        None => (MaskBundle::empty(size, source), false),
    };
    Ok(Item {
        sample,
        masks,
        has_face,
    })
}

impl DomainPair {
    /// Loads a split from a prepared directory. Images without landmarks get empty masks.
    pub fn load(prepared: impl AsRef<Path>, split: Split, size: usize, dilation: usize) -> Result<Self> {
        let prepared = prepared.as_ref();
        let manifest = DatasetManifest::load(prepared.join(MANIFEST_FILE))?;
        let cache = LandmarkCache::load(prepared.join(LANDMARKS_FILE))?;
        let load = |domain| -> Result<Vec<Item>> {
            manifest
                .ids(domain, split)
                .iter()
                .map(|id| load_item(prepared, domain, split, id, &cache, size, dilation))
                .collect()
        };
        Ok(Self {
            x: load(Domain::Photo)?,
            y: load(Domain::Portrait)?,
            size,
        })
    }

    pub fn from_items(x: Vec<Item>, y: Vec<Item>, size: usize) -> Self {
        Self { x, y, size }
    }

    pub fn require_nonempty(&self) -> Result<()> {
        if self.x.is_empty() || self.y.is_empty() {
            return Err(Error::Dataset(format!(
                "training needs images in both domains (x: {}, y: {})",
                self.x.len(),
                self.y.len()
            )));
        }
        Ok(())
    }
}

/// Index pairs for one epoch, grouped into batches (the ragged tail is dropped).
///
/// The larger domain sets the epoch length and is visited exactly once in a
/// fresh order; the smaller domain cycles through reshuffled passes.
pub fn epoch_batches(n_x: usize, n_y: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<(usize, usize)>> {
    if n_x == 0 || n_y == 0 || batch_size == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("epoch{epoch}")));
    let len = n_x.max(n_y);
    let stream = |n: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
        let mut out = Vec::with_capacity(len);
        while out.len() < len {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(rng);
            out.extend(perm);
        }
        out.truncate(len);
        out
    };
    let xs = stream(n_x, &mut rng);
    let ys = stream(n_y, &mut rng);
    let pairs: Vec<(usize, usize)> = xs.into_iter().zip(ys).collect();
    pairs
        .chunks_exact(batch_size)
        .map(|c| c.to_vec())
        .collect()
}

/// A stacked batch ready for a training step.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Tensor,
    pub y: Tensor,
    pub masks_x: MaskTensors,
    pub masks_y: MaskTensors,
    pub ids: Vec<String>,
}

fn pick_augmentation(cfg: &AugmentConfig, rng: &mut impl Rng) -> Augmentation {
    let kinds: Vec<Augmentation> = [
        (cfg.hflip, Augmentation::Hflip),
        (cfg.blur, Augmentation::Blur),
        (cfg.noise, Augmentation::Noise),
    ]
    .into_iter()
    .filter_map(|(on, k)| on.then_some(k))
    .collect();
    if kinds.is_empty() || !rng.random_bool(cfg.probability) {
        return Augmentation::None;
    }
    kinds[rng.random_range(0..kinds.len())]
}

fn augmented(item: &Item, kind: Augmentation, cfg: &AugmentConfig, rng: &mut impl Rng) -> (ImageSample, MaskBundle) {
    let sample = augment(&item.sample, kind, &cfg.params, rng);
    let masks = if kind == Augmentation::Hflip {
        item.masks.mirrored()
    } else {
        item.masks.clone()
    };
    (sample, masks)
}

/// Stacks items into tensors. `augment` is `Some` for training batches only.
pub fn make_batch(
    data: &DomainPair,
    pairs: &[(usize, usize)],
    augment_with: Option<(&AugmentConfig, &mut ChaCha8Rng)>,
    dtype: DType,
    device: &Device,
) -> Result<Batch> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut mx = Vec::new();
    let mut my = Vec::new();
    let mut ids = Vec::new();
    let mut aug = augment_with;
    for &(i, j) in pairs {
        let (a, b) = (&data.x[i], &data.y[j]);
        let ((sa, ma), (sb, mb)) = match aug.as_mut() {
            Some((cfg, rng)) => {
                let ka = pick_augmentation(cfg, *rng);
                let first = augmented(a, ka, cfg, *rng);
                let kb = pick_augmentation(cfg, *rng);
                (first, augmented(b, kb, cfg, *rng))
            }
            None => ((a.sample.clone(), a.masks.clone()), (b.sample.clone(), b.masks.clone())),
        };
        ids.push(format!("{}|{}", sa.id, sb.id));
        xs.push(sa.to_tensor(dtype, device)?);
        ys.push(sb.to_tensor(dtype, device)?);
        mx.push(ma);
        my.push(mb);
    }
    Ok(Batch {
        x: Tensor::cat(&xs, 0)?,
        y: Tensor::cat(&ys, 0)?,
        masks_x: MaskTensors::stack(&mx.iter().collect::<Vec<_>>(), dtype, device)?,
        masks_y: MaskTensors::stack(&my.iter().collect::<Vec<_>>(), dtype, device)?,
        ids,
    })
}

/// Distinct indices of each domain within an epoch plan.
pub fn coverage(batches: &[Vec<(usize, usize)>]) -> (BTreeSet<usize>, BTreeSet<usize>) {
    let mut a = BTreeSet::new();
    let mut b = BTreeSet::new();
    for &(i, j) in batches.iter().flatten() {
        a.insert(i);
        b.insert(j);
    }
    (a, b)
}
