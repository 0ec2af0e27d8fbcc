use std::fs;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::balance::BalanceTable;
use super::metrics::{psnr, ssim};
use crate::data::{denormalize, normalize, resize_to_canvas, Domain, ImageSample, RawImage, Split};
use crate::error::Result;
use crate::networks::Generator;
use crate::prepare::{replace_dir, sibling_tmp};
use crate::training::{load_generator, resolve_checkpoint, DomainPair};

/// Scores of one generated `x_y` against its content `x` and style `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub pair_id: String,
    #[serde(rename = "P_content")]
    pub p_content: f64,
    #[serde(rename = "P_style")]
    pub p_style: f64,
    #[serde(rename = "S_content")]
    pub s_content: f64,
    #[serde(rename = "S_style")]
    pub s_style: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub label: String,
    pub pairs: usize,
    pub p_content: f64,
    pub p_style: f64,
    pub s_content: f64,
    pub s_style: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub variants: Vec<VariantSummary>,
    /// Present when exactly five variants were evaluated.
    pub psnr: Option<BalanceTable>,
    pub ssim: Option<BalanceTable>,
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// Evaluate only the first `n` test pairs (row-major over x then y).
    pub max_pairs: Option<usize>,
    /// Also write every generated image to `<out>/<label>/images`.
    pub save_images: bool,
    pub dilation: usize,
}

/// Generates `x_y` for every selected test pair with one generator and scores it.
pub fn score_variant(
    generator: &Generator,
    test: &DomainPair,
    opts: &EvalOptions,
    image_dir: Option<&Path>,
) -> Result<Vec<MetricRecord>> {
    let device = Device::Cpu;
    let dtype = DType::F32;
    let limit = opts.max_pairs.unwrap_or(usize::MAX);
    let mut records = Vec::new();
    if let Some(dir) = image_dir {
        fs::create_dir_all(dir)?;
    }
    'outer: for x in &test.x {
        let xt = x.sample.to_tensor(dtype, &device)?;
        let content = denormalize(&x.sample);
        for y in &test.y {
            if records.len() >= limit {
                break 'outer;
            }
            let yt = y.sample.to_tensor(dtype, &device)?;
            let out = generator.infer(&xt, &yt)?;
            let pair_id = format!("{}__{}", x.sample.id, y.sample.id);
            let fake = denormalize(&ImageSample::from_tensor(&out.x_y, &pair_id, Domain::Portrait)?);
            let style = denormalize(&y.sample);
            if let Some(dir) = image_dir {
                fake.save(dir.join(format!("{pair_id}.png")))?;
            }
            records.push(MetricRecord {
                pair_id,
                p_content: psnr(&fake, &content)?,
                p_style: psnr(&fake, &style)?,
                s_content: ssim(&fake, &content)?,
                s_style: ssim(&fake, &style)?,
            });
        }
    }
    Ok(records)
}

fn mean(records: &[MetricRecord], f: impl Fn(&MetricRecord) -> f64) -> f64 {
    records.iter().map(f).sum::<f64>() / records.len().max(1) as f64
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct ScatterRow<'a> {
    variant: &'a str,
    pair_id: &'a str,
    content: f64,
    style: f64,
}

/// Scores every variant on the test pairs and writes per-variant CSVs,
/// scatter CSVs per metric family and `summary.json` into `out_dir`.
///
/// A variant without a loadable checkpoint is skipped with a warning.
pub fn evaluate_testset(
    variants: &[(String, PathBuf)],
    prepared: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
    opts: &EvalOptions,
) -> Result<EvaluationSummary> {
    let prepared = prepared.as_ref();
    let out_dir = out_dir.as_ref();
    let tmp = sibling_tmp(out_dir);
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;
    let mut summaries = Vec::new();
    let mut all: Vec<(String, Vec<MetricRecord>)> = Vec::new();
    let mut skipped = Vec::new();
    let mut test_cache: Option<(usize, DomainPair)> = None;
    for (label, path) in variants {
        let loaded = resolve_checkpoint(path).and_then(|dir| load_generator(dir, &Device::Cpu));
        let (generator, meta) = match loaded {
            Ok(g) => g,
            Err(e) => {
                log::warn!("skipping variant {label}: {e}");
                skipped.push(label.clone());
                continue;
            }
        };
        let size = meta.config.image_size;
        if test_cache.as_ref().is_none_or(|(s, _)| *s != size) {
            test_cache = Some((size, DomainPair::load(prepared, Split::Test, size, opts.dilation)?));
        }
        let test = &test_cache.as_ref().expect("loaded above").1;
        let image_dir = opts.save_images.then(|| tmp.join(label).join("images"));
        let records = score_variant(&generator, test, opts, image_dir.as_deref())?;
        write_csv(&tmp.join(format!("metrics_{label}.csv")), &records)?;
        summaries.push(VariantSummary {
            label: label.clone(),
            pairs: records.len(),
            p_content: mean(&records, |r| r.p_content),
            p_style: mean(&records, |r| r.p_style),
            s_content: mean(&records, |r| r.s_content),
            s_style: mean(&records, |r| r.s_style),
        });
        all.push((label.clone(), records));
    }
    for (family, pick) in [
        ("psnr", (|r: &MetricRecord| (r.p_content, r.p_style)) as fn(&MetricRecord) -> (f64, f64)),
        ("ssim", |r: &MetricRecord| (r.s_content, r.s_style)),
    ] {
        let rows: Vec<ScatterRow> = all
            .iter()
            .flat_map(|(label, recs)| {
                recs.iter().map(move |r| {
                    let (content, style) = pick(r);
                    ScatterRow {
                        variant: label,
                        pair_id: &r.pair_id,
                        content,
                        style,
                    }
                })
            })
            .collect();
        write_csv(&tmp.join(format!("scatter_{family}.csv")), &rows)?;
    }
    let table = |content: fn(&VariantSummary) -> f64, style: fn(&VariantSummary) -> f64| {
        if summaries.len() != 5 {
            return Ok(None);
        }
        let c: Vec<(String, f64)> = summaries.iter().map(|s| (s.label.clone(), content(s))).collect();
        let st: Vec<(String, f64)> = summaries.iter().map(|s| (s.label.clone(), style(s))).collect();
        BalanceTable::new(&c, &st).map(Some)
    };
    if summaries.len() != 5 {
        log::warn!("{} variants evaluated; balance tables need exactly 5", summaries.len());
    }
    let summary = EvaluationSummary {
        psnr: table(|s| s.p_content, |s| s.p_style)?,
        ssim: table(|s| s.s_content, |s| s.s_style)?,
        variants: summaries,
        skipped,
    };
    fs::write(tmp.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    replace_dir(&tmp, out_dir)?;
    Ok(summary)
}

/// Runs a generator on a single pair of samples and returns `x_y` as a tensor.
pub fn stylize(generator: &Generator, content: &ImageSample, style: &ImageSample) -> Result<Tensor> {
    let dev = Device::Cpu;
    let out = generator.infer(&content.to_tensor(DType::F32, &dev)?, &style.to_tensor(DType::F32, &dev)?)?;
    Ok(out.x_y)
}

/// Resizes a content and a style image to `size` and returns the stylized `x_y`.
pub fn stylize_images(generator: &Generator, size: usize, content: &RawImage, style: &RawImage) -> Result<RawImage> {
    let x = normalize(&resize_to_canvas(content, size)?, "content")?;
    let y = normalize(&resize_to_canvas(style, size)?, "style")?;
    let out = stylize(generator, &x, &y)?;
    Ok(denormalize(&ImageSample::from_tensor(&out, "x_y", Domain::Portrait)?))
}

pub fn stylize_files(generator: &Generator, size: usize, content: &Path, style: &Path) -> Result<RawImage> {
    let content = RawImage::open(content, Domain::Photo)?;
    let style = RawImage::open(style, Domain::Portrait)?;
    stylize_images(generator, size, &content, &style)
}

/// Places equally sized images side by side.
pub fn side_by_side(images: &[&RawImage]) -> Result<RawImage> {
    image_grid(&[images.to_vec()])
}

/// Tiles rows of images onto a white background; each cell is as large as the largest image.
pub fn image_grid(rows: &[Vec<&RawImage>]) -> Result<RawImage> {
    let cells = rows.iter().flatten();
    let cw = cells.clone().map(|i| i.width()).max().unwrap_or(1);
    let ch = cells.map(|i| i.height()).max().unwrap_or(1);
    let cols = rows.iter().map(Vec::len).max().unwrap_or(1).max(1);
    let mut out = RawImage::filled(cols * cw, rows.len().max(1) * ch, [255, 255, 255], Domain::Portrait)?;
    for (r, row) in rows.iter().enumerate() {
        for (c, img) in row.iter().enumerate() {
            for y in 0..img.height() {
                for x in 0..img.width() {
                    out.set_pixel(c * cw + x, r * ch + y, img.pixel(x, y));
                }
            }
        }
    }
    Ok(out)
}
