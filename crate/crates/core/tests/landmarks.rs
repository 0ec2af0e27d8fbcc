mod common;

use common::{hull_mask_oracle, random_landmarks};
use gatnet::data::{load_and_crop, resize_to_canvas, sharpen_high_boost, Domain, SharpenConfig};
use gatnet::landmarks::{build_component_masks, build_head_mask, LandmarkDetector, LandmarkSet, Mask, SyntheticFaceDetector};
use gatnet::prepare::CANVAS_SIZE;
use gatnet::synthetic::render_face;

const S: usize = CANVAS_SIZE;

fn bools(m: &Mask) -> Vec<bool> {
    m.data().iter().map(|&v| v != 0).collect()
}

fn union(a: &[bool], b: &[bool]) -> Vec<bool> {
    a.iter().zip(b).map(|(x, y)| *x || *y).collect()
}

#[test]
fn component_masks_match_hull_oracle() {
    for seed in 0..20 {
        let lm = random_landmarks(seed);
        let m = build_component_masks(&lm, S, 0);
        let eye = union(&hull_mask_oracle(&lm.points[36..42], S), &hull_mask_oracle(&lm.points[42..48], S));
        assert_eq!(bools(&m.eye), eye, "eye, seed {seed}");
        assert_eq!(bools(&m.nose), hull_mask_oracle(&lm.points[27..36], S), "nose, seed {seed}");
        assert_eq!(bools(&m.lip), hull_mask_oracle(&lm.points[48..68], S), "lips, seed {seed}");
    }
}

#[test]
fn dilation_is_a_euclidean_disk() {
    for seed in 0..5 {
        let lm = random_landmarks(seed);
        let base = build_component_masks(&lm, S, 0);
        let r = 3usize;
        let grown = build_component_masks(&lm, S, r);
        for (b, g) in [(&base.eye, &grown.eye), (&base.nose, &grown.nose), (&base.lip, &grown.lip)] {
            let on: Vec<(i64, i64)> = (0..S * S).filter(|&i| b.data()[i] != 0).map(|i| ((i % S) as i64, (i / S) as i64)).collect();
            for y in 0..S {
                for x in 0..S {
                    let near = on.iter().any(|&(px, py)| {
                        let (dx, dy) = (px - x as i64, py - y as i64);
                        dx * dx + dy * dy <= (r * r) as i64
                    });
                    assert_eq!(g.get(x, y), near, "seed {seed} at ({x},{y})");
                }
            }
        }
    }
}

fn with_brow_top(top: f32) -> LandmarkSet {
    let lm = random_landmarks(1);
    let current = lm.eyebrow_top();
    let mut points = lm.points.clone();
    for p in &mut points[17..27] {
        p[1] += top - current;
    }
    LandmarkSet::new(points, "brows").unwrap()
}

#[test]
fn head_mask_covers_rows_above_the_brows() {
    let m = build_head_mask(&with_brow_top(80.0), S);
    assert_eq!(m.count(), 80 * 256);
    assert_eq!(m.count(), 20480);
    for y in 0..S {
        assert_eq!(m.get(17, y), y < 80);
    }
    let lower = build_head_mask(&with_brow_top(90.0), S);
    assert_eq!(lower.count() - m.count(), 10 * 256);
    assert!(build_head_mask(&with_brow_top(0.0), S).is_empty());
}

#[test]
fn masks_follow_integer_translation() {
    for seed in 0..5 {
        let lm = random_landmarks(seed);
        let (dx, dy) = (7i64, -5i64);
        let a = build_component_masks(&lm, S, 1);
        let b = build_component_masks(&lm.translated(dx as f32, dy as f32), S, 1);
        for (ma, mb) in [(&a.eye, &b.eye), (&a.nose, &b.nose), (&a.lip, &b.lip)] {
            assert_eq!(ma.count(), mb.count());
            for y in 0..S {
                for x in 0..S {
                    if ma.get(x, y) {
                        assert!(mb.get((x as i64 + dx) as usize, (y as i64 + dy) as usize));
                    }
                }
            }
        }
    }
}

#[test]
fn synthetic_detector_recovers_geometry() {
    let detector = SyntheticFaceDetector::default();
    let sharpen = SharpenConfig::default();
    let mut worst: f64 = 0.0;
    for domain in [Domain::Photo, Domain::Portrait] {
        for seed in 0..10 {
            let face = render_face(domain, 500 + seed);
            let canvas = resize_to_canvas(&load_and_crop(face.image.clone(), face.crop).unwrap(), S).unwrap();
            let sharp = sharpen_high_boost(&canvas, &sharpen).unwrap();
            let found = detector.detect(&sharp, "t").unwrap();
            let truth = face.canvas_geometry(S).landmarks("t");
            worst = worst.max(found.rms_distance(&truth));
        }
    }
    assert!(worst <= 5.0, "worst landmark RMS error {worst:.2} px");
}
