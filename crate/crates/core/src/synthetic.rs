//! Procedurally generated face-like images with analytically known landmarks.
//!
//! ID photos get a pale blue backdrop, a dark suit and a hair cap. Portraits
//! get a textured silk backdrop, a red robe and a black Gat (brim plus crown)
//! and are rendered "whole body" with a crop box around the head. Every face
//! is an ellipse with dark eyebrows and eyes, a shaded nose and red lips, so
//! the 68 landmarks follow directly from the drawing parameters.

use std::collections::BTreeMap;
use std::f32::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{CropBox, Domain, RawImage, Split};
use crate::error::Result;
use crate::landmarks::{LandmarkSet, LANDMARK_COUNT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f32,
    pub cy: f32,
    pub rx: f32,
    pub ry: f32,
}

impl Ellipse {
    pub fn contains(&self, x: f32, y: f32) -> bool {
        let dx = (x - self.cx) / self.rx;
        let dy = (y - self.cy) / self.ry;
        dx * dx + dy * dy <= 1.0
    }

    /// Point at angle `phi`, measured counter-clockwise on screen (y up).
    fn at(&self, phi: f32) -> [f32; 2] {
        [self.cx + self.rx * phi.cos(), self.cy - self.ry * phi.sin()]
    }

    fn scaled(&self, sx: f32, sy: f32) -> Self {
        Self {
            cx: self.cx * sx,
            cy: self.cy * sy,
            rx: self.rx * sx,
            ry: self.ry * sy,
        }
    }
}

/// Axis-aligned bar `[x0, x1] × [y0, y1]` (inclusive, in pixel-center coordinates).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub x0: f32,
    pub x1: f32,
    pub y0: f32,
    pub y1: f32,
}

impl Bar {
    pub fn contains(&self, x: f32, y: f32) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    fn scaled(&self, sx: f32, sy: f32) -> Self {
        Self {
            x0: self.x0 * sx,
            x1: self.x1 * sx,
            y0: self.y0 * sy,
            y1: self.y1 * sy,
        }
    }
}

/// Drawing parameters of one face; also the model the synthetic detector fits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceGeometry {
    pub face: Ellipse,
    /// Image-left and image-right eyebrows.
    pub brows: [Bar; 2],
    pub eyes: [Ellipse; 2],
    pub nose: Bar,
    pub lips: Ellipse,
}

impl FaceGeometry {
    /// Canonical layout relative to a face ellipse with small random jitter.
    pub fn around<R: Rng + ?Sized>(face: Ellipse, rng: &mut R) -> Self {
        let mut j = |span: f32| rng.random_range(-span..=span);
        let (rx, ry) = (face.rx, face.ry);
        let eye_dx = rx * (0.40 + j(0.03));
        let eye_y = face.cy - ry * (0.12 + j(0.02));
        let eye_rx = rx * (0.17 + j(0.02));
        let eye_ry = ry * (0.07 + j(0.01));
        let eyes = [
            Ellipse { cx: face.cx - eye_dx, cy: eye_y, rx: eye_rx, ry: eye_ry },
            Ellipse { cx: face.cx + eye_dx, cy: eye_y, rx: eye_rx, ry: eye_ry },
        ];
        let brow_y = eye_y - ry * (0.20 + j(0.02));
        let brow_half = ry * 0.035;
        let brow_w = rx * (0.24 + j(0.02));
        let brows = eyes.map(|e| Bar {
            x0: e.cx - brow_w,
            x1: e.cx + brow_w,
            y0: brow_y - brow_half,
            y1: brow_y + brow_half,
        });
        let nose_hw = rx * (0.11 + j(0.02));
        let nose = Bar {
            x0: face.cx - nose_hw,
            x1: face.cx + nose_hw,
            y0: eye_y + ry * 0.02,
            y1: face.cy + ry * (0.25 + j(0.02)),
        };
        let lips = Ellipse {
            cx: face.cx,
            cy: face.cy + ry * (0.50 + j(0.03)),
            rx: rx * (0.33 + j(0.03)),
            ry: ry * (0.085 + j(0.01)),
        };
        Self { face, brows, eyes, nose, lips }
    }

    /// Per-axis rescale, e.g. after resizing the image.
    pub fn scaled(&self, sx: f32, sy: f32) -> Self {
        Self {
            face: self.face.scaled(sx, sy),
            brows: self.brows.map(|b| b.scaled(sx, sy)),
            eyes: self.eyes.map(|e| e.scaled(sx, sy)),
            nose: self.nose.scaled(sx, sy),
            lips: self.lips.scaled(sx, sy),
        }
    }

    pub fn translated(&self, dx: f32, dy: f32) -> Self {
        let mv = |e: Ellipse| Ellipse { cx: e.cx + dx, cy: e.cy + dy, ..e };
        let mb = |b: Bar| Bar { x0: b.x0 + dx, x1: b.x1 + dx, y0: b.y0 + dy, y1: b.y1 + dy };
        Self {
            face: mv(self.face),
            brows: self.brows.map(mb),
            eyes: self.eyes.map(mv),
            nose: mb(self.nose),
            lips: mv(self.lips),
        }
    }

    /// The 68-point layout: jaw, brows, nose, eyes, outer and inner lips.
    pub fn landmark_points(&self) -> Vec<[f32; 2]> {
        let mut pts = Vec::with_capacity(LANDMARK_COUNT);
        // jaw: lower half of the face ellipse, image-left to image-right through the chin
        for k in 0..17 {
            pts.push(self.face.at(PI + k as f32 * PI / 16.0));
        }
        for b in &self.brows {
            let y = (b.y0 + b.y1) / 2.0;
            for k in 0..5 {
                pts.push([b.x0 + (b.x1 - b.x0) * k as f32 / 4.0, y]);
            }
        }
        let cx = (self.nose.x0 + self.nose.x1) / 2.0;
        for k in 0..4 {
            pts.push([cx, self.nose.y0 + (self.nose.y1 - self.nose.y0) * k as f32 / 4.0]);
        }
        for k in 0..5 {
            pts.push([self.nose.x0 + (self.nose.x1 - self.nose.x0) * k as f32 / 4.0, self.nose.y1]);
        }
        for e in &self.eyes {
            for deg in [180.0f32, 120.0, 60.0, 0.0, -60.0, -120.0] {
                pts.push(e.at(deg.to_radians()));
            }
        }
        for k in 0..12 {
            pts.push(self.lips.at(PI - k as f32 * PI / 6.0));
        }
        let inner = Ellipse { rx: self.lips.rx * 0.6, ry: self.lips.ry * 0.4, ..self.lips };
        for k in 0..8 {
            pts.push(inner.at(PI - k as f32 * PI / 4.0));
        }
        pts
    }

    pub fn landmarks(&self, id: impl Into<String>) -> LandmarkSet {
        LandmarkSet::new(self.landmark_points(), id).expect("layout always has 68 points")
    }
}

fn shade(c: [f32; 3], k: f32) -> [f32; 3] {
    c.map(|v| v * k)
}

fn jitter_color<R: Rng + ?Sized>(c: [f32; 3], span: f32, rng: &mut R) -> [f32; 3] {
    let d = rng.random_range(-span..=span);
    c.map(|v| (v + d).clamp(0.0, 255.0))
}

/// One rendered face plus its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticFace {
    pub image: RawImage,
    pub geometry: FaceGeometry,
    /// Head crop for portraits; `None` for ID photos.
    pub crop: Option<CropBox>,
}

impl SyntheticFace {
    /// Ground-truth geometry after cropping and resizing to a `size`x`size` canvas.
    pub fn canvas_geometry(&self, size: usize) -> FaceGeometry {
        let (ox, oy, w, h) = match self.crop {
            Some(c) => (c.x0 as f32, c.y0 as f32, c.width() as f32, c.height() as f32),
            None => (0.0, 0.0, self.image.width() as f32, self.image.height() as f32),
        };
        let g = self.geometry.translated(-ox, -oy);
        // pixel-center alignment: c' = (c + 0.5)·s − 0.5
        let (sx, sy) = (size as f32 / w, size as f32 / h);
        let mut s = g.scaled(sx, sy);
        s = s.translated(0.5 * sx - 0.5, 0.5 * sy - 0.5);
        s
    }
}

/// Renders a face of the given domain. Photos are 200x240; portraits 300x420.
pub fn render_face(domain: Domain, seed: u64) -> SyntheticFace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_FACE);
    match domain {
        Domain::Photo => render_photo(&mut rng),
        Domain::Portrait => render_portrait(&mut rng),
    }
}

fn render_photo(rng: &mut ChaCha8Rng) -> SyntheticFace {
    let (w, h) = (200usize, 240usize);
    let face = Ellipse {
        cx: w as f32 / 2.0 + rng.random_range(-6.0..=6.0),
        cy: h as f32 * 0.47 + rng.random_range(-6.0..=6.0),
        rx: rng.random_range(50.0..=60.0),
        ry: rng.random_range(66.0..=76.0),
    };
    let g = FaceGeometry::around(face, rng);
    let bg = jitter_color([196.0, 210.0, 236.0], 10.0, rng);
    let suit = jitter_color([44.0, 46.0, 70.0], 8.0, rng);
    let hair = jitter_color([58.0, 42.0, 34.0], 8.0, rng);
    let skin = jitter_color([228.0, 186.0, 158.0], 10.0, rng);
    let hair_cap = Ellipse { cx: face.cx, cy: face.cy - face.ry * 0.30, rx: face.rx * 1.10, ry: face.ry * 0.90 };
    let hair_line = g.brows[0].y0 - face.ry * 0.10;
    let neck = Bar { x0: face.cx - face.rx * 0.35, x1: face.cx + face.rx * 0.35, y0: face.cy, y1: h as f32 };
    let shoulders = face.cy + face.ry * 1.05;
    let image = paint(w, h, Domain::Photo, rng, 3.0, |x, y| {
        let mut c = bg;
        if y >= shoulders {
            c = suit;
        } else if neck.contains(x, y) {
            c = shade(skin, 0.72);
        }
        if g.face.contains(x, y) {
            c = skin;
        }
        if hair_cap.contains(x, y) && y < hair_line {
            c = hair;
        }
        features(&g, skin, x, y).unwrap_or(c)
    });
    SyntheticFace { image, geometry: g, crop: None }
}

fn render_portrait(rng: &mut ChaCha8Rng) -> SyntheticFace {
    let (w, h) = (300usize, 420usize);
    let face = Ellipse {
        cx: w as f32 / 2.0 + rng.random_range(-10.0..=10.0),
        cy: 150.0 + rng.random_range(-8.0..=8.0),
        rx: rng.random_range(40.0..=48.0),
        ry: rng.random_range(52.0..=60.0),
    };
    let g = FaceGeometry::around(face, rng);
    let bg = jitter_color([84.0, 104.0, 88.0], 10.0, rng);
    let robe = jitter_color([158.0, 56.0, 48.0], 10.0, rng);
    let gat = jitter_color([26.0, 24.0, 24.0], 4.0, rng);
    let skin = jitter_color([214.0, 172.0, 134.0], 10.0, rng);
    let brim = Ellipse { cx: face.cx, cy: face.cy - face.ry * 0.78, rx: face.rx * 1.9, ry: face.ry * 0.13 };
    let crown = Bar { x0: face.cx - face.rx * 0.75, x1: face.cx + face.rx * 0.75, y0: face.cy - face.ry * 1.6, y1: brim.cy };
    let robe_top = face.cy + face.ry * 1.02;
    let stripe = rng.random_range(5.0..=9.0);
    let image = paint(w, h, Domain::Portrait, rng, 7.0, |x, y| {
        let weave = 6.0 * ((x + y) / stripe).sin();
        let mut c = bg.map(|v| v + weave);
        if y >= robe_top && (x - face.cx).abs() < face.rx * 1.8 + (y - robe_top) * 0.8 {
            c = robe;
        }
        if g.face.contains(x, y) {
            c = skin;
        }
        if brim.contains(x, y) || crown.contains(x, y) {
            c = gat;
        }
        features(&g, skin, x, y).unwrap_or(c)
    });
    let side = (face.ry * 3.0).round() as usize;
    let x0 = (face.cx - side as f32 / 2.0).round() as usize;
    let y0 = (face.cy - face.ry * 1.75).round() as usize;
    let crop = CropBox::new(x0, y0, x0 + side, y0 + side);
    SyntheticFace { image, geometry: g, crop: Some(crop) }
}

fn features(g: &FaceGeometry, skin: [f32; 3], x: f32, y: f32) -> Option<[f32; 3]> {
    if g.brows.iter().any(|b| b.contains(x, y)) {
        return Some([52.0, 40.0, 36.0]);
    }
    if g.eyes.iter().any(|e| e.contains(x, y)) {
        return Some([36.0, 28.0, 30.0]);
    }
    if g.lips.contains(x, y) {
        return Some([188.0, 68.0, 76.0]);
    }
    if g.nose.contains(x, y) {
        return Some(shade(skin, 0.78));
    }
    None
}

fn paint(
    w: usize,
    h: usize,
    domain: Domain,
    rng: &mut ChaCha8Rng,
    grain: f32,
    mut color: impl FnMut(f32, f32) -> [f32; 3],
) -> RawImage {
    RawImage::from_fn(w, h, domain, |x, y| {
        let c = color(x as f32, y as f32);
        let n = rng.random_range(-grain..=grain);
        c.map(|v| (v + n).round().clamp(0.0, 255.0) as u8)
    })
    .expect("non-empty canvas")
}

/// Counts per split for [`write_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticCounts {
    pub train_x: usize,
    pub test_x: usize,
    pub train_y: usize,
    pub test_y: usize,
}

impl SyntheticCounts {
    pub fn pairs(train: usize, test: usize) -> Self {
        Self { train_x: train, test_x: test, train_y: train, test_y: test }
    }
}

/// Ground truth written next to a synthetic dataset.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SyntheticTruth {
    /// Geometry in the original (uncropped) frame of each file, keyed `x/train/<id>`.
    pub geometry: BTreeMap<String, FaceGeometry>,
}

pub const CROPS_FILE: &str = "crops.json";
pub const TRUTH_FILE: &str = "truth.json";

/// Writes `root/{x,y}/{train,test}/*.png`, `crops.json` and `truth.json`.
pub fn write_dataset(root: impl AsRef<Path>, counts: SyntheticCounts, seed: u64) -> Result<()> {
    let root = root.as_ref();
    let mut crops: BTreeMap<String, CropBox> = BTreeMap::new();
    let mut truth = SyntheticTruth::default();
    let plan = [
        (Domain::Photo, Split::Train, counts.train_x),
        (Domain::Photo, Split::Test, counts.test_x),
        (Domain::Portrait, Split::Train, counts.train_y),
        (Domain::Portrait, Split::Test, counts.test_y),
    ];
    for (k, (domain, split, n)) in plan.into_iter().enumerate() {
        let dir = root.join(domain.dir_name()).join(split.dir_name());
        fs::create_dir_all(&dir)?;
        for i in 0..n {
            let id = format!("{}{}_{i:04}", domain.dir_name(), split.dir_name());
            let face = render_face(domain, seed.wrapping_mul(1_000_003).wrapping_add((k * 100_000 + i) as u64));
            face.image.save(dir.join(format!("{id}.png")))?;
            let key = format!("{}/{}/{id}", domain.dir_name(), split.dir_name());
            if let Some(c) = face.crop {
                crops.insert(key.clone(), c);
            }
            truth.geometry.insert(key, face.geometry);
        }
    }
    fs::write(root.join(CROPS_FILE), serde_json::to_vec_pretty(&crops)?)?;
    fs::write(root.join(TRUTH_FILE), serde_json::to_vec_pretty(&truth)?)?;
    Ok(())
}
