mod common;

use candle_core::{DType, Device, Tensor};
use common::*;
use gatnet::landmarks::{MaskBundle, MaskSource};
use gatnet::losses::*;
use gatnet::perceptual::{FeatureExtractor, Layer, ScaledExtractor, ToyExtractor};
use rand::Rng;

const SHAPE: [usize; 4] = [2, 3, 8, 8];

fn masks_for(seed: u64, size: usize, source: MaskSource) -> MaskBundle {
    let lm = random_landmarks(seed).rescaled(size as f32 / 256.0).clamped(size);
    MaskBundle::from_landmarks(&lm, size, 1, source)
}

fn stacked(seeds: &[u64], size: usize, source: MaskSource) -> (MaskTensors, Vec<MaskBundle>) {
    let bundles: Vec<MaskBundle> = seeds.iter().map(|&s| masks_for(s, size, source)).collect();
    let refs: Vec<&MaskBundle> = bundles.iter().collect();
    (MaskTensors::stack(&refs, DType::F64, &Device::Cpu).unwrap(), bundles)
}

#[test]
fn cycle_matches_loop_oracle() {
    let t: Vec<Tensor> = (0..4).map(|i| uniform(&SHAPE, -1.0, 1.0, i)).collect();
    let got = scalar(&cycle_loss(&t[0], &t[1], &t[2], &t[3]).unwrap());
    let want = mean_abs_loop(&values(&t[2]), &values(&t[0])) + mean_abs_loop(&values(&t[3]), &values(&t[1]));
    assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    assert_eq!(scalar(&cycle_loss(&t[0], &t[1], &t[0], &t[1]).unwrap()), 0.0);
}

#[test]
fn land_matches_per_pixel_oracle() {
    let size = 64;
    let shape = [2, 3, size, size];
    let (mx, bx) = stacked(&[1, 2], size, MaskSource::ContentX);
    let (my, by) = stacked(&[3, 4], size, MaskSource::StyleY);
    let t: Vec<Tensor> = (10..14).map(|i| uniform(&shape, -1.0, 1.0, i)).collect();
    let (x_y, x, y_x, y) = (&t[0], &t[1], &t[2], &t[3]);
    let terms = land_loss(x_y, x, y_x, y, &mx, &my).unwrap();
    let mask_vals = |bs: &[MaskBundle], f: fn(&MaskBundle) -> &gatnet::landmarks::Mask| -> Vec<f64> {
        bs.iter().flat_map(|b| f(b).data().iter().map(|&v| v as f64)).collect()
    };
    let oracle = |f: fn(&MaskBundle) -> &gatnet::landmarks::Mask| {
        masked_l1_loop(&values(x_y), &values(x), &mask_vals(&bx, f), 2, 3, size, size)
            + masked_l1_loop(&values(y_x), &values(y), &mask_vals(&by, f), 2, 3, size, size)
    };
    let eye = oracle(|b| &b.eye);
    let nose = oracle(|b| &b.nose);
    let lip = oracle(|b| &b.lip);
    assert!((scalar(&terms.eye) - eye).abs() < 1e-6);
    assert!((scalar(&terms.nose) - nose).abs() < 1e-6);
    assert!((scalar(&terms.lip) - lip).abs() < 1e-6);
    assert!((scalar(&terms.total) - (eye + nose + lip)).abs() < 1e-6);
    let same = land_loss(x, x, y, y, &mx, &my).unwrap();
    assert_eq!(scalar(&same.total), 0.0);
}

#[test]
fn head_matches_oracle_and_offset() {
    let size = 64;
    let shape = [2, 3, size, size];
    let (mx, bx) = stacked(&[5, 6], size, MaskSource::ContentX);
    let (my, by) = stacked(&[7, 8], size, MaskSource::StyleY);
    let t: Vec<Tensor> = (20..24).map(|i| uniform(&shape, -1.0, 1.0, i)).collect();
    let (x_y, y, y_x, x) = (&t[0], &t[1], &t[2], &t[3]);
    let got = scalar(&head_loss(x_y, y, y_x, x, &my.head, &mx.head).unwrap());
    let hm = |bs: &[MaskBundle]| -> Vec<f64> { bs.iter().flat_map(|b| b.head.data().iter().map(|&v| v as f64)).collect() };
    let want = masked_l1_loop(&values(x_y), &values(y), &hm(&by), 2, 3, size, size)
        + masked_l1_loop(&values(y_x), &values(x), &hm(&bx), 2, 3, size, size);
    assert!((got - want).abs() < 1e-6);
    // y + 1 on exactly the band gives a first term of 1
    let shifted = (y + my.head.broadcast_as((2, 3, size, size)).unwrap()).unwrap();
    let first = scalar(&masked_l1(&shifted, y, &my.head).unwrap());
    assert!((first - 1.0).abs() < 1e-12);
    assert_eq!(scalar(&head_loss(y, y, x, x, &my.head, &mx.head).unwrap()), 0.0);
}

#[test]
fn masked_losses_ignore_pixels_outside_support() {
    let size = 32;
    let shape = [1, 3, size, size];
    let mut r = rng(99);
    for trial in 0..100u64 {
        let bx = masks_for(1000 + trial, size, MaskSource::ContentX);
        let by = masks_for(2000 + trial, size, MaskSource::StyleY);
        let mx = MaskTensors::stack(&[&bx], DType::F64, &Device::Cpu).unwrap();
        let my = MaskTensors::stack(&[&by], DType::F64, &Device::Cpu).unwrap();
        let t: Vec<Tensor> = (0..4).map(|i| uniform(&shape, -1.0, 1.0, trial * 10 + i)).collect();
        let (x_y, x, y_x, y) = (&t[0], &t[1], &t[2], &t[3]);
        let land = scalar(&land_loss(x_y, x, y_x, y, &mx, &my).unwrap().total);
        let head = scalar(&head_loss(x_y, y, y_x, x, &my.head, &mx.head).unwrap());

        // perturb fakes only where no mask of the relevant bundle is set
        let outside = |b: &MaskBundle, with_head: bool| -> Vec<bool> {
            (0..size * size)
                .map(|i| {
                    let d = [&b.eye, &b.nose, &b.lip];
                    let mut inside = d.iter().any(|m| m.data()[i] != 0);
                    if with_head {
                        inside |= b.head.data()[i] != 0;
                    }
                    !inside
                })
                .collect()
        };
        let perturb = |t: &Tensor, keep_out: &[bool], r: &mut rand_chacha::ChaCha8Rng| -> Tensor {
            let mut v = values(t);
            for c in 0..3 {
                for (i, &o) in keep_out.iter().enumerate() {
                    if o {
                        v[c * size * size + i] += r.random_range(-3.0..3.0);
                    }
                }
            }
            tensor(v, &shape)
        };
        let px_y = perturb(x_y, &outside(&bx, false), &mut r);
        let py_x = perturb(y_x, &outside(&by, false), &mut r);
        assert_eq!(scalar(&land_loss(&px_y, x, &py_x, y, &mx, &my).unwrap().total), land, "land, trial {trial}");
        // head terms: x_y is masked by y's band, y_x by x's band
        let hx_y = perturb(x_y, &outside(&by, true), &mut r);
        let hy_x = perturb(y_x, &outside(&bx, true), &mut r);
        assert_eq!(scalar(&head_loss(&hx_y, y, &hy_x, x, &my.head, &mx.head).unwrap()), head, "head, trial {trial}");
    }
}

/// Two-channel "backbone" that returns the first two image channels unchanged.
struct FirstTwoChannels;

impl FeatureExtractor for FirstTwoChannels {
    fn extract(&self, images: &Tensor, layers: &[Layer]) -> gatnet::Result<Vec<Tensor>> {
        Ok(layers.iter().map(|_| images.narrow(1, 0, 2).unwrap()).collect())
    }
}

#[test]
fn style_matches_hand_evaluated_gram_difference() {
    let shape = [1, 3, 4, 4];
    let t: Vec<Tensor> = (30..34).map(|i| uniform(&shape, -1.0, 1.0, i)).collect();
    let (x_y, y, y_x, x) = (&t[0], &t[1], &t[2], &t[3]);
    let got = scalar(&style_loss(&FirstTwoChannels, x_y, y, y_x, x, &[Layer::Conv2_2]).unwrap());
    let gram2 = |t: &Tensor| gram_loop(&values(t)[..32], 2, 4, 4);
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
    let (n, m) = (2.0f64, 16.0f64);
    let want = (sq(&gram2(x_y), &gram2(y)) + sq(&gram2(y_x), &gram2(x))) / (4.0 * n * n * m * m);
    assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    assert_eq!(scalar(&style_loss(&FirstTwoChannels, y, y, x, x, &[Layer::Conv2_2]).unwrap()), 0.0);
}

#[test]
fn doubling_features_scales_style_by_sixteen() {
    let toy = ToyExtractor::new(2, 4, DType::F64, &Device::Cpu).unwrap();
    let doubled = ScaledExtractor {
        inner: ToyExtractor::new(2, 4, DType::F64, &Device::Cpu).unwrap(),
        scale: 2.0,
    };
    let t: Vec<Tensor> = (40..44).map(|i| uniform(&SHAPE, -1.0, 1.0, i)).collect();
    let layers = [Layer::Conv2_2];
    let a = scalar(&style_loss(&toy, &t[0], &t[1], &t[2], &t[3], &layers).unwrap());
    let b = scalar(&style_loss(&doubled, &t[0], &t[1], &t[2], &t[3], &layers).unwrap());
    assert!(a > 0.0);
    assert!((b / a - 16.0).abs() < 1e-9, "ratio {}", b / a);
}

#[test]
fn content_matches_loop_oracle_and_offset() {
    let toy = ToyExtractor::new(3, 5, DType::F64, &Device::Cpu).unwrap();
    let t: Vec<Tensor> = (50..54).map(|i| uniform(&SHAPE, -1.0, 1.0, i)).collect();
    let (x_y, x, y_x, y) = (&t[0], &t[1], &t[2], &t[3]);
    let layers = [Layer::Conv4_1];
    let got = scalar(&content_loss(&toy, x_y, x, y_x, y, &layers).unwrap());
    let f = |t: &Tensor| values(&toy.extract(t, &layers).unwrap()[0]);
    let want = mse_loop(&f(x_y), &f(x)) + mse_loop(&f(y_x), &f(y));
    assert!((got - want).abs() < 1e-6);
    assert_eq!(scalar(&content_loss(&toy, x, x, y, y, &layers).unwrap()), 0.0);
    let a = uniform(&[1, 4, 3, 3], -1.0, 1.0, 55);
    let b = (&a + 2.0).unwrap();
    let offset = scalar(&content_loss_from_features(&[(&b, &a)]).unwrap());
    assert!((offset - 4.0).abs() < 1e-12);
}

#[test]
fn discriminator_matches_loop_oracle() {
    let g: Vec<Tensor> = (60..64).map(|i| uniform(&[2, 1, 6, 6], -1.0, 2.0, i)).collect();
    let got = scalar(&discriminator_loss(&g[0], &g[1], &g[2], &g[3]).unwrap());
    let ms = |t: &Tensor, target: f64| {
        let v = values(t);
        v.iter().map(|p| (p - target).powi(2)).sum::<f64>() / v.len() as f64
    };
    let want = ms(&g[0], 1.0) + ms(&g[1], 0.0) + ms(&g[2], 1.0) + ms(&g[3], 0.0);
    assert!((got - want).abs() < 1e-6);
    let ones = Tensor::ones((1, 1, 30, 30), DType::F64, &Device::Cpu).unwrap();
    let zeros = ones.zeros_like().unwrap();
    assert_eq!(scalar(&discriminator_loss(&ones, &zeros, &ones, &zeros).unwrap()), 0.0);
    let adv = scalar(&adversarial_g(&g[1], &g[3]).unwrap());
    assert!((adv - (ms(&g[1], 1.0) + ms(&g[3], 1.0))).abs() < 1e-6);
}

#[test]
fn generator_total_is_a_dot_product() {
    let mut r = rng(7);
    let w = LossWeights::default();
    for _ in 0..50 {
        let p: Vec<f64> = (0..6).map(|_| r.random_range(0.0..5.0)).collect();
        let parts = LossParts {
            cycle: p[0],
            land: Some(p[1]),
            head: Some(p[2]),
            style: Some(p[3]),
            content: Some(p[4]),
            adversarial: Some(p[5]),
        };
        let want = 50.0 * p[0] + 0.2 * p[1] + 0.5 * p[2] + 1.0 * p[3] + 0.1 * p[4] + 1.0 * p[5];
        assert!((generator_total(&parts, &w) - want).abs() < 1e-9);
        let mut w2 = w;
        w2.style *= 2.0;
        let delta = generator_total(&parts, &w2) - generator_total(&parts, &w);
        assert!((delta - p[3]).abs() < 1e-9);
    }
    let zero = LossParts {
        cycle: 0.0,
        land: Some(0.0),
        head: Some(0.0),
        style: Some(0.0),
        content: Some(0.0),
        adversarial: Some(0.0),
    };
    assert_eq!(generator_total(&zero, &w), 0.0);
}

fn check_grad(name: &str, f: &dyn Fn(&Tensor) -> Tensor, seed: u64) {
    let x = values(&uniform(&SHAPE, -1.0, 1.0, seed));
    let analytic = analytic_grad(f, &x, &SHAPE);
    let numeric = numeric_grad(&|t| scalar(&f(t)), &x, &SHAPE, 1e-6);
    let err = grad_rel_error(&analytic, &numeric);
    assert!(err < 1e-3, "{name}: relative gradient error {err}");
    assert!(numeric.iter().any(|g| g.abs() > 0.0), "{name}: zero gradient");
}

#[test]
fn gradients_match_finite_differences() {
    let other: Vec<Tensor> = (70..74).map(|i| uniform(&SHAPE, -1.0, 1.0, i)).collect();
    let (mx, _) = stacked(&[11, 12], 8, MaskSource::ContentX);
    let (my, _) = stacked(&[13, 14], 8, MaskSource::StyleY);
    let band = {
        let mut v = vec![0.0; 2 * 64];
        v[..24].iter_mut().for_each(|p| *p = 1.0);
        v[64..64 + 40].iter_mut().for_each(|p| *p = 1.0);
        tensor(v, &[2, 1, 8, 8])
    };
    let eye_like = {
        let mut v = vec![0.0; 2 * 64];
        for i in [18, 19, 26, 27, 64 + 36, 64 + 37, 64 + 44] {
            v[i] = 1.0;
        }
        tensor(v, &[2, 1, 8, 8])
    };
    let toy = ToyExtractor::new(2, 9, DType::F64, &Device::Cpu).unwrap();
    let (o0, o1, o2, o3) = (&other[0], &other[1], &other[2], &other[3]);
    check_grad("cycle", &|t| cycle_loss(o0, o1, t, o2).unwrap(), 1);
    check_grad("masked_l1", &|t| masked_l1(t, o0, &eye_like).unwrap(), 2);
    check_grad("land", &|t| land_loss(t, o0, o1, o2, &mx, &my).unwrap().total, 3);
    check_grad("head", &|t| head_loss(t, o0, o1, o2, &band, &band).unwrap(), 4);
    check_grad(
        "style",
        &|t| style_loss(&toy, t, o0, o1, o2, &[Layer::Conv2_2, Layer::Conv3_2]).unwrap(),
        5,
    );
    check_grad("content", &|t| content_loss(&toy, t, o0, o1, o2, &[Layer::Conv4_1]).unwrap(), 6);
    check_grad("adversarial_g", &|t| adversarial_g(t, o3).unwrap(), 7);
    check_grad("discriminator", &|t| discriminator_loss(o0, t, o1, o3).unwrap(), 8);
    let w = LossWeights::default();
    check_grad(
        "generator_total",
        &|t| {
            let parts = LossParts {
                cycle: cycle_loss(o0, o1, t, o2).unwrap(),
                land: Some(land_loss(t, o0, o1, o2, &mx, &my).unwrap().total),
                head: Some(head_loss(t, o0, o1, o2, &band, &band).unwrap()),
                style: Some(style_loss(&toy, t, o0, o1, o2, &[Layer::Conv2_2]).unwrap()),
                content: Some(content_loss(&toy, t, o0, o1, o2, &[Layer::Conv4_1]).unwrap()),
                adversarial: Some(adversarial_g(t, o3).unwrap()),
            };
            generator_total_tensor(&parts, &w).unwrap()
        },
        9,
    );
}
