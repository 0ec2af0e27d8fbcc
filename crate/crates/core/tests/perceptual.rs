mod common;

use candle_core::{DType, Device};
use common::*;
use gatnet::perceptual::{gram, FeatureExtractor, FeatureMap, Layer, Vgg16};
use rand::seq::SliceRandom;
use rand::Rng;

fn random_map(seed: u64) -> (FeatureMap, [usize; 3]) {
    let mut r = rng(seed);
    let dims = [r.random_range(1..=8), r.random_range(1..=8), r.random_range(1..=8)];
    let t = uniform(&dims, -2.0, 2.0, seed + 1_000);
    (FeatureMap { values: t, layer: Layer::Conv2_2 }, dims)
}

#[test]
fn gram_matches_triple_loop_oracle() {
    for seed in 0..100 {
        let (f, [c, h, w]) = random_map(seed);
        let got = values(&gram(&f).unwrap().values);
        let want = gram_loop(&values(&f.values), c, h, w);
        assert!(max_rel(&got, &want) < 1e-5, "seed {seed}");
    }
}

#[test]
fn gram_is_symmetric_and_psd() {
    for seed in 0..20 {
        let (f, [c, ..]) = random_map(seed);
        let g = values(&gram(&f).unwrap().values);
        for i in 0..c {
            for j in 0..c {
                assert!((g[i * c + j] - g[j * c + i]).abs() <= 1e-12 * g[i * c + i].abs().max(1.0));
            }
        }
        let m = nalgebra::DMatrix::from_row_slice(c, c, &g);
        let trace: f64 = (0..c).map(|i| g[i * c + i]).sum();
        for e in m.symmetric_eigen().eigenvalues.iter() {
            assert!(*e >= -1e-6 * trace, "eigenvalue {e}");
        }
    }
}

#[test]
fn gram_ignores_spatial_order_and_scales_quadratically() {
    for seed in 0..20 {
        let (f, [c, h, w]) = random_map(seed);
        let v = values(&f.values);
        let mut perm: Vec<usize> = (0..h * w).collect();
        perm.shuffle(&mut rng(seed + 7));
        let mut shuffled = vec![0.0; v.len()];
        for ch in 0..c {
            for (dst, &src) in perm.iter().enumerate() {
                shuffled[ch * h * w + dst] = v[ch * h * w + src];
            }
        }
        let g = values(&gram(&f).unwrap().values);
        let gp = values(
            &gram(&FeatureMap {
                values: tensor(shuffled, &[c, h, w]),
                layer: f.layer,
            })
            .unwrap()
            .values,
        );
        assert!(max_rel(&gp, &g) < 1e-12);
        let s = 1.7;
        let gs = values(
            &gram(&FeatureMap {
                values: (&f.values * s).unwrap(),
                layer: f.layer,
            })
            .unwrap()
            .values,
        );
        let scaled: Vec<f64> = g.iter().map(|x| x * s * s).collect();
        assert!(max_rel(&gs, &scaled) < 1e-12);
    }
}

#[test]
fn vgg_feature_shapes_at_full_size() {
    let vgg = Vgg16::seeded(0, DType::F32, &Device::Cpu).unwrap();
    let x = uniform(&[1, 3, 256, 256], -1.0, 1.0, 3).to_dtype(DType::F32).unwrap();
    let layers = [Layer::Conv2_2, Layer::Conv3_2, Layer::Conv4_1];
    let maps = vgg.extract(&x, &layers).unwrap();
    assert_eq!(maps[0].dims(), [1, 128, 128, 128]);
    assert_eq!(maps[1].dims(), [1, 256, 64, 64]);
    assert_eq!(maps[2].dims(), [1, 512, 32, 32]);
    let again = vgg.extract(&x, &layers[..1]).unwrap();
    assert_eq!(values(&again[0]), values(&maps[0]));
}

#[test]
fn unknown_layer_is_rejected() {
    assert!("conv9_1".parse::<Layer>().is_err());
    assert!("pool3".parse::<Layer>().is_err());
    assert_eq!("conv3_2".parse::<Layer>().unwrap(), Layer::Conv3_2);
}
