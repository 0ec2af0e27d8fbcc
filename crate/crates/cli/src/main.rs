use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use candle_core::{DType, Device};
use clap::{Parser, Subcommand};
use gatnet::config::Config;
use gatnet::data::{denormalize, Domain, RawImage, Split};
use gatnet::evaluation::{evaluate_testset, image_grid, stylize_images, EvalOptions};
use gatnet::landmarks::overlay_masks;
use gatnet::perceptual::Vgg16;
use gatnet::prepare::{make_detector, preprocess, replace_dir, sharpen_sweep, sibling_tmp};
use gatnet::smoke::{run_smoke, smoke_config};
use gatnet::training::{
    ablation_variants, latest_checkpoint, load_generator, resolve_checkpoint, resume_or_new,
    run_ablation_suite, train_loop, DomainPair, LoopOptions,
};
use gatnet::Error;

/// Exit codes: 0 success, 1 usage or config, 2 data, 3 checkpoint, 4 I/O,
/// 5 run failure (numerical or backend error, or a failed smoke check).
#[derive(Parser, Debug)]
#[command(name = "gatnet", version, about = "Photo-to-portrait style transfer pipeline")]
struct Cli {
    /// Plain-text `key = value` config file.
    #[arg(long, short, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Crop, resize and detect landmarks; writes canvases, manifest and landmark cache.
    Preprocess {
        /// Only report detection success for sharpening off and A in {1.2, 1.5, 2.0}.
        #[arg(long)]
        sweep: bool,
    },
    /// Train one configuration (ablation flags taken from the config).
    Train {
        /// Continue from the latest checkpoint in the run directory.
        #[arg(long)]
        resume: bool,
        /// Stop after this many epochs; resume later with --resume.
        #[arg(long, value_name = "N")]
        stop_after: Option<usize>,
    },
    /// Train all five ablation variants under the run directory.
    Ablate {
        #[arg(long)]
        resume: bool,
    },
    /// Stylize one content photo with one style portrait.
    Infer {
        #[arg(long, value_name = "FILE")]
        content: PathBuf,
        #[arg(long, value_name = "FILE")]
        style: PathBuf,
        #[arg(long, short, value_name = "FILE")]
        out: PathBuf,
        /// Checkpoint or run directory; defaults to the configured run directory.
        #[arg(long, value_name = "DIR")]
        checkpoint: Option<PathBuf>,
        /// Also write a content | style | result strip.
        #[arg(long, value_name = "FILE")]
        grid: Option<PathBuf>,
    },
    /// Score variants on the test pairs and write CSV and JSON reports.
    Evaluate {
        /// Variant as LABEL=DIR; repeatable. Defaults to the run directory or its ablation variants.
        #[arg(long = "variant", value_name = "LABEL=DIR")]
        variants: Vec<String>,
        #[arg(long, value_name = "N")]
        max_pairs: Option<usize>,
        #[arg(long)]
        save_images: bool,
    },
    /// Render mask overlays of prepared canvases for inspection.
    Masks {
        #[arg(long, short, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, default_value = "train", value_parser = ["train", "test"])]
        split: String,
        #[arg(long, value_name = "N")]
        limit: Option<usize>,
    },
    /// Comparison grid: content | style | one column per variant, one row per test pair.
    Grid {
        #[arg(long = "variant", value_name = "LABEL=DIR")]
        variants: Vec<String>,
        #[arg(long, short, value_name = "FILE")]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        pairs: usize,
    },
    /// Toy end-to-end run on generated data with pass/fail checks.
    Smoke {
        /// Working directory for the generated data, run and reports.
        #[arg(long, default_value = "smoke_run", value_name = "DIR")]
        root: PathBuf,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.root() {
            Error::Config(_) | Error::UnknownLayer(_) | Error::EpochOutOfRange { .. } => 1,
            Error::Dataset(_)
            | Error::EmptyImage
            | Error::CropOutOfBounds { .. }
            | Error::ShapeMismatch { .. }
            | Error::NoFaceDetected(_)
            | Error::WrongCount { .. } => 2,
            Error::Checkpoint { .. } => 3,
            Error::Io(_) | Error::ImageDecode { .. } | Error::Image(_) | Error::Json(_) | Error::Csv(_) => 4,
            Error::NonFiniteLoss { .. } | Error::Tensor(_) | Error::Stage { .. } => 5,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn build_config(cli: &Cli) -> CliResult<Config> {
    let mut cfg = match &cli.command {
        Command::Smoke { root } => smoke_config(root),
        _ => Config::default(),
    };
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path)
            .map_err(|e| fail(1, format!("cannot read config {}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    for kv in &cli.overrides {
        cfg.apply_override(kv)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_variants(specs: &[String]) -> CliResult<Vec<(String, PathBuf)>> {
    specs
        .iter()
        .map(|s| match s.split_once('=') {
            Some((l, p)) if !l.trim().is_empty() && !p.trim().is_empty() => {
                Ok((l.trim().to_string(), PathBuf::from(p.trim())))
            }
            _ => Err(fail(1, format!("variant '{s}' is not LABEL=DIR"))),
        })
        .collect()
}

/// Explicit variants, else the run directory itself, else its five ablation subdirectories.
fn default_variants(cfg: &Config, specs: &[String]) -> CliResult<Vec<(String, PathBuf)>> {
    if !specs.is_empty() {
        return parse_variants(specs);
    }
    if latest_checkpoint(&cfg.run_dir)?.is_some() {
        return Ok(vec![(cfg.train.variant_label(), cfg.run_dir.clone())]);
    }
    Ok(ablation_variants(&cfg.train)
        .into_iter()
        .map(|(label, _)| {
            let dir = cfg.run_dir.join(&label);
            (label, dir)
        })
        .collect())
}

fn write_image_atomic(image: &RawImage, path: &Path) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(Error::from)?;
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .ok_or_else(|| fail(1, format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{name}.tmp.png"));
    image.save(&tmp)?;
    fs::rename(&tmp, path).map_err(Error::from)?;
    Ok(())
}

fn open_image(path: &Path, domain: Domain) -> CliResult<RawImage> {
    if !path.is_file() {
        return Err(fail(4, format!("cannot read image {}: not a file", path.display())));
    }
    Ok(RawImage::open(path, domain)?)
}

fn cmd_preprocess(cfg: &Config, sweep: bool) -> CliResult {
    let detector = make_detector(cfg)?;
    if sweep {
        let rows = sharpen_sweep(cfg, detector.as_ref(), &[None, Some(1.2), Some(1.5), Some(2.0)])?;
        println!("sharpen  detected");
        for (boost, ok, total) in rows {
            let label = boost.map(|a| format!("A={a}")).unwrap_or_else(|| "off".into());
            println!("{label:<8} {ok}/{total}");
        }
        return Ok(());
    }
    let report = preprocess(cfg, detector.as_ref())?;
    let c = &report.manifest.counts;
    println!("train_x {}", c.train_x);
    println!("test_x {}", c.test_x);
    println!("train_y {}", c.train_y);
    println!("test_y {}", c.test_y);
    println!("test_pairs {}", c.test_pairs);
    println!("landmarks detected {}", report.detected);
    println!("detection failures {}", report.failures.len());
    for key in &report.failures {
        println!("  {key}");
    }
    println!("wrote {}", cfg.prepared_dir.display());
    Ok(())
}

fn extractor(cfg: &Config) -> CliResult<Arc<Vgg16>> {
    Ok(Arc::new(Vgg16::load_or_seeded(
        cfg.vgg_weights.as_deref(),
        cfg.train.seed,
        DType::F32,
        &Device::Cpu,
    )?))
}

fn train_data(cfg: &Config) -> CliResult<DomainPair> {
    let data = DomainPair::load(&cfg.prepared_dir, Split::Train, cfg.train.image_size, cfg.mask_dilation)?;
    data.require_nonempty()?;
    Ok(data)
}

fn cmd_train(cfg: &Config, resume: bool, stop_after: Option<usize>) -> CliResult {
    let data = train_data(cfg)?;
    let mut trainer = resume_or_new(&cfg.train, &cfg.run_dir, resume, extractor(cfg)?, &Device::Cpu)?;
    let stats = train_loop(&mut trainer, &data, &cfg.run_dir, &LoopOptions { stop_after })?;
    for s in &stats {
        println!(
            "epoch {} lr {:.3e} G {:.4} D {:.4}",
            s.epoch + 1,
            s.lr,
            s.mean.generator_total,
            s.mean.discriminator_total
        );
    }
    println!("completed {}/{} epochs in {}", trainer.epoch, cfg.train.epochs, cfg.run_dir.display());
    Ok(())
}

fn cmd_ablate(cfg: &Config, resume: bool) -> CliResult {
    let data = train_data(cfg)?;
    let dirs = run_ablation_suite(&cfg.train, &data, &cfg.run_dir, resume, extractor(cfg)?, &Device::Cpu)?;
    for (label, dir) in dirs {
        println!("{label} {}", dir.display());
    }
    Ok(())
}

fn cmd_infer(
    cfg: &Config,
    content: &Path,
    style: &Path,
    out: &Path,
    checkpoint: Option<&Path>,
    grid: Option<&Path>,
) -> CliResult {
    let content = open_image(content, Domain::Photo)?;
    let style = open_image(style, Domain::Portrait)?;
    let dir = resolve_checkpoint(checkpoint.unwrap_or(&cfg.run_dir))?;
    let (generator, meta) = load_generator(&dir, &Device::Cpu)?;
    let size = meta.config.image_size;
    let result = stylize_images(&generator, size, &content, &style)?;
    write_image_atomic(&result, out)?;
    println!("wrote {} ({size}x{size}) from {}", out.display(), dir.display());
    if let Some(grid) = grid {
        let c = gatnet::data::resize_to_canvas(&content, size)?;
        let s = gatnet::data::resize_to_canvas(&style, size)?;
        write_image_atomic(&image_grid(&[vec![&c, &s, &result]])?, grid)?;
        println!("wrote {}", grid.display());
    }
    Ok(())
}

fn cmd_evaluate(cfg: &Config, variants: &[String], max_pairs: Option<usize>, save_images: bool) -> CliResult {
    let variants = default_variants(cfg, variants)?;
    let opts = EvalOptions {
        max_pairs,
        save_images,
        dilation: cfg.mask_dilation,
    };
    let summary = evaluate_testset(&variants, &cfg.prepared_dir, &cfg.eval_dir, &opts)?;
    if summary.variants.is_empty() {
        return Err(fail(3, format!("no variant had a loadable checkpoint (skipped: {})", summary.skipped.join(", "))));
    }
    println!("variant  pairs  P_content  P_style  S_content  S_style");
    for v in &summary.variants {
        println!(
            "{:<8} {:>5} {:>10.4} {:>8.4} {:>10.4} {:>8.4}",
            v.label, v.pairs, v.p_content, v.p_style, v.s_content, v.s_style
        );
    }
    for (name, table) in [("PSNR", &summary.psnr), ("SSIM", &summary.ssim)] {
        if let Some(t) = table {
            println!("{name} balance: content w_avg {:.4}, style w_avg {:.4}", t.content.w_avg, t.style.w_avg);
            for (label, e) in t.content.labels.iter().zip(&t.total) {
                println!("  E({label}) = {e:.4}");
            }
        }
    }
    for label in &summary.skipped {
        println!("skipped {label}: no checkpoint");
    }
    println!("wrote {}", cfg.eval_dir.display());
    Ok(())
}

fn cmd_masks(cfg: &Config, out: &Path, split: &str, limit: Option<usize>) -> CliResult {
    let split = if split == "test" { Split::Test } else { Split::Train };
    let data = DomainPair::load(&cfg.prepared_dir, split, cfg.train.image_size, cfg.mask_dilation)?;
    let tmp = sibling_tmp(out);
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(Error::from)?;
    }
    let mut written = 0;
    let mut without_face = 0;
    for (domain, items) in [(Domain::Photo, &data.x), (Domain::Portrait, &data.y)] {
        let dir = tmp.join(domain.dir_name());
        fs::create_dir_all(&dir).map_err(Error::from)?;
        for item in items.iter().take(limit.unwrap_or(usize::MAX)) {
            if !item.has_face {
                without_face += 1;
            }
            let overlay = overlay_masks(&denormalize(&item.sample), &item.masks)?;
            overlay.save(dir.join(format!("{}.png", item.sample.id)))?;
            written += 1;
        }
    }
    replace_dir(&tmp, out)?;
    println!("wrote {written} overlays to {} ({without_face} without landmarks)", out.display());
    Ok(())
}

fn cmd_grid(cfg: &Config, variants: &[String], out: &Path, pairs: usize) -> CliResult {
    let variants = default_variants(cfg, variants)?;
    let mut generators = Vec::new();
    for (label, path) in &variants {
        match resolve_checkpoint(path).and_then(|d| load_generator(d, &Device::Cpu)) {
            Ok((g, meta)) => generators.push((label.clone(), g, meta.config.image_size)),
            Err(e) => log::warn!("skipping variant {label}: {e}"),
        }
    }
    let size = match generators.first() {
        Some((_, _, s)) => *s,
        None => return Err(fail(3, "no variant had a loadable checkpoint")),
    };
    let test = DomainPair::load(&cfg.prepared_dir, Split::Test, size, cfg.mask_dilation)?;
    let mut rows: Vec<Vec<RawImage>> = Vec::new();
    'outer: for x in &test.x {
        for y in &test.y {
            if rows.len() >= pairs {
                break 'outer;
            }
            let content = denormalize(&x.sample);
            let style = denormalize(&y.sample);
            let mut row = vec![content.clone(), style.clone()];
            for (_, g, _) in &generators {
                row.push(stylize_images(g, size, &content, &style)?);
            }
            rows.push(row);
        }
    }
    if rows.is_empty() {
        return Err(fail(2, "no test pairs in the prepared directory"));
    }
    let refs: Vec<Vec<&RawImage>> = rows.iter().map(|r| r.iter().collect()).collect();
    write_image_atomic(&image_grid(&refs)?, out)?;
    let labels: Vec<&str> = generators.iter().map(|(l, _, _)| l.as_str()).collect();
    println!("wrote {} ({} rows; columns content, style, {})", out.display(), rows.len(), labels.join(", "));
    Ok(())
}

fn cmd_smoke(cfg: &Config) -> CliResult {
    let report = run_smoke(cfg)?;
    for e in &report.epochs {
        println!("epoch {} G {:.4} D {:.4}", e.epoch + 1, e.mean.generator_total, e.mean.discriminator_total);
    }
    let checks = report.checks();
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!("inferred {}", report.inferred.display());
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(fail(5, format!("smoke check failed: {}", failed.join(", "))))
    }
}

fn run(cli: &Cli) -> CliResult {
    let cfg = build_config(cli)?;
    match &cli.command {
        Command::Preprocess { sweep } => cmd_preprocess(&cfg, *sweep),
        Command::Train { resume, stop_after } => cmd_train(&cfg, *resume, *stop_after),
        Command::Ablate { resume } => cmd_ablate(&cfg, *resume),
        Command::Infer {
            content,
            style,
            out,
            checkpoint,
            grid,
        } => cmd_infer(&cfg, content, style, out, checkpoint.as_deref(), grid.as_deref()),
        Command::Evaluate {
            variants,
            max_pairs,
            save_images,
        } => cmd_evaluate(&cfg, variants, *max_pairs, *save_images),
        Command::Masks { out, split, limit } => cmd_masks(&cfg, out, split, *limit),
        Command::Grid { variants, out, pairs } => cmd_grid(&cfg, variants, out, *pairs),
        Command::Smoke { .. } => cmd_smoke(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
