use std::sync::Arc;

use candle_core::{DType, Device, Tensor};
use gatnet::data::{normalize, resize_to_canvas, Domain};
use gatnet::error::Error;
use gatnet::landmarks::{MaskBundle, MaskSource};
use gatnet::networks::{DiscriminatorConfig, GeneratorConfig};
use gatnet::perceptual::{FeatureExtractor, ToyExtractor};
use gatnet::synthetic::render_face;
use gatnet::training::{
    ablation_variants, checkpoint_dir, load_trainer, lr_schedule, make_batch, resume_or_new, save_checkpoint,
    train_loop, AblationFlag, Batch, DomainPair, Item, LoopOptions, TrainConfig, Trainer,
};

const SIZE: usize = 32;

fn tiny_config() -> TrainConfig {
    TrainConfig {
        image_size: SIZE,
        generator: GeneratorConfig {
            base_channels: 4,
            res_blocks: 1,
        },
        discriminator: DiscriminatorConfig { base_channels: 4 },
        epochs: 4,
        checkpoint_every: 0,
        ..Default::default()
    }
}

fn extractor() -> Arc<dyn FeatureExtractor> {
    Arc::new(ToyExtractor::new(4, 9, DType::F32, &Device::Cpu).unwrap())
}

fn item(domain: Domain, seed: u64) -> Item {
    let face = render_face(domain, seed);
    let canvas = match face.crop {
        Some(c) => gatnet::data::load_and_crop(face.image.clone(), Some(c)).unwrap(),
        None => face.image.clone(),
    };
    let canvas = resize_to_canvas(&canvas, SIZE).unwrap();
    let lm = face.canvas_geometry(SIZE).landmarks(format!("{domain:?}{seed}")).clamped(SIZE);
    let source = match domain {
        Domain::Photo => MaskSource::ContentX,
        Domain::Portrait => MaskSource::StyleY,
    };
    Item {
        sample: normalize(&canvas, format!("{domain:?}{seed}")).unwrap(),
        masks: MaskBundle::from_landmarks(&lm, SIZE, 1, source),
        has_face: true,
    }
}

fn data(n: usize) -> DomainPair {
    DomainPair::from_items(
        (0..n as u64).map(|s| item(Domain::Photo, s)).collect(),
        (0..n as u64).map(|s| item(Domain::Portrait, 100 + s)).collect(),
        SIZE,
    )
}

fn batch(d: &DomainPair) -> Batch {
    make_batch(d, &[(0, 0)], None, DType::F32, &Device::Cpu).unwrap()
}

fn bits(t: &Tensor) -> Vec<u32> {
    t.flatten_all().unwrap().to_vec1::<f32>().unwrap().iter().map(|v| v.to_bits()).collect()
}

fn generator_bits(t: &Trainer) -> Vec<(String, Vec<u32>)> {
    t.generator.vars().iter().map(|(n, v)| (n.clone(), bits(v.as_tensor()))).collect()
}

#[test]
fn every_generator_parameter_receives_gradient() {
    let d = data(1);
    let mut t = Trainer::new(tiny_config(), extractor(), DType::F32, &Device::Cpu).unwrap();
    let out = t.train_step(&batch(&d), 1e-4).unwrap();
    assert!(!out.generator_grad_norms.is_empty());
    for (name, norm) in &out.generator_grad_norms {
        assert!(*norm > 0.0 && norm.is_finite(), "{name} has gradient norm {norm}");
    }
}

#[test]
fn cycle_only_objective_when_everything_else_is_off() {
    let d = data(1);
    let mut cfg = tiny_config();
    cfg.ablation = AblationFlag::ALL.into_iter().collect();
    cfg.weights.adversarial = 0.0;
    let mut t = Trainer::new(cfg, extractor(), DType::F32, &Device::Cpu).unwrap();
    let r = t.train_step(&batch(&d), 1e-4).unwrap().report;
    assert!(r.land.is_none() && r.head.is_none() && r.style.is_none());
    assert!(r.content.is_none() && r.adversarial_g.is_none());
    assert!((r.generator_total - 50.0 * r.cycle).abs() <= 1e-5 * r.generator_total);
}

#[test]
fn dropping_the_head_term_removes_it_from_the_report() {
    let d = data(1);
    let mut cfg = tiny_config();
    cfg.ablation.insert(AblationFlag::DropHead);
    let mut t = Trainer::new(cfg, extractor(), DType::F32, &Device::Cpu).unwrap();
    let r = t.train_step(&batch(&d), 1e-4).unwrap().report;
    assert!(r.head.is_none());
    assert!(r.land.is_some() && r.style.is_some() && r.content.is_some());
}

#[test]
fn steps_are_bitwise_deterministic() {
    let d = data(1);
    let run = || {
        let mut t = Trainer::new(tiny_config(), extractor(), DType::F32, &Device::Cpu).unwrap();
        let r = t.train_step(&batch(&d), 1e-4).unwrap().report;
        (r, generator_bits(&t))
    };
    let (a, pa) = run();
    let (b, pb) = run();
    assert_eq!(a, b);
    assert_eq!(pa, pb);
}

#[test]
fn checkpoint_round_trip_is_exact_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let d = data(1);
    let mut t = Trainer::new(tiny_config(), extractor(), DType::F32, &Device::Cpu).unwrap();
    t.train_step(&batch(&d), 1e-4).unwrap();
    save_checkpoint(&t, dir.path().join("ck")).unwrap();
    let mut back = load_trainer(dir.path().join("ck"), extractor(), &Device::Cpu).unwrap();
    assert_eq!(generator_bits(&t), generator_bits(&back));
    assert_eq!(back.step, t.step);
    // optimizer moments and spectral vectors came back too, so the next step matches
    let a = t.train_step(&batch(&d), 1e-4).unwrap().report;
    let b = back.train_step(&batch(&d), 1e-4).unwrap().report;
    assert_eq!(a, b);
    assert_eq!(generator_bits(&t), generator_bits(&back));
}

#[test]
fn resumed_run_continues_the_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let d = data(2);
    let mut cfg = tiny_config();
    cfg.checkpoint_every = 1;
    let mut t = Trainer::new(cfg.clone(), extractor(), DType::F32, &Device::Cpu).unwrap();
    let first = train_loop(&mut t, &d, dir.path(), &LoopOptions { stop_after: Some(2) }).unwrap();
    assert_eq!(first.len(), 2);
    assert!(checkpoint_dir(dir.path(), 2).join("meta.json").is_file());
    let mut resumed = resume_or_new(&cfg, dir.path(), true, extractor(), &Device::Cpu).unwrap();
    assert_eq!(resumed.epoch, 2);
    let rest = train_loop(&mut resumed, &d, dir.path(), &LoopOptions::default()).unwrap();
    assert_eq!(rest.iter().map(|s| s.epoch).collect::<Vec<_>>(), [2, 3]);
    for s in &rest {
        assert_eq!(s.lr, lr_schedule(s.epoch, &cfg).unwrap());
    }
    assert_eq!(resumed.epoch, cfg.epochs);
}

#[test]
fn empty_domain_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let full = data(1);
    let d = DomainPair::from_items(full.x, Vec::new(), SIZE);
    let mut t = Trainer::new(tiny_config(), extractor(), DType::F32, &Device::Cpu).unwrap();
    let err = train_loop(&mut t, &d, dir.path(), &LoopOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Dataset(_)), "{err}");
}

#[test]
fn ablation_variants_start_from_identical_weights() {
    let variants = ablation_variants(&tiny_config());
    let inits: Vec<_> = variants
        .iter()
        .map(|(_, c)| generator_bits(&Trainer::new(c.clone(), extractor(), DType::F32, &Device::Cpu).unwrap()))
        .collect();
    assert!(inits.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn non_finite_input_is_reported_with_ids() {
    let d = data(1);
    let mut b = batch(&d);
    let nan = Tensor::full(f32::NAN, b.x.dims(), &Device::Cpu).unwrap();
    b.x = nan;
    let mut t = Trainer::new(tiny_config(), extractor(), DType::F32, &Device::Cpu).unwrap();
    match t.train_step(&b, 1e-4) {
        Err(Error::NonFiniteLoss { ids, .. }) => assert_eq!(ids, b.ids),
        other => panic!("expected a non-finite loss error, got {other:?}"),
    }
}
