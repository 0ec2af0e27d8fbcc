use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::{Component, LandmarkSet, LEFT_EYE, RIGHT_EYE};
use crate::data::RawImage;
use crate::error::{Error, Result};

const HULL_EPS: f64 = 1e-9;

/// A square `{0, 1}` mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    size: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn empty(size: usize) -> Self {
        Self {
            size,
            data: vec![0; size * size],
        }
    }

    pub fn from_fn(size: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::empty(size);
        for y in 0..size {
            for x in 0..size {
                m.data[y * size + x] = f(x, y) as u8;
            }
        }
        m
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.size + x] != 0
    }

    pub fn set(&mut self, x: i64, y: i64) {
        if x >= 0 && y >= 0 && (x as usize) < self.size && (y as usize) < self.size {
            self.data[y as usize * self.size + x as usize] = 1;
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn union(&self, other: &Mask) -> Mask {
        Mask {
            size: self.size,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a | b).collect(),
        }
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| a <= b)
    }

    pub fn mirrored(&self) -> Mask {
        Mask::from_fn(self.size, |x, y| self.get(self.size - 1 - x, y))
    }

    /// Every pixel within Euclidean distance `radius` of a set pixel.
    pub fn dilated(&self, radius: usize) -> Mask {
        if radius == 0 {
            return self.clone();
        }
        let r = radius as i64;
        let offsets: Vec<(i64, i64)> = (-r..=r)
            .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
            .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
            .collect();
        let mut out = Mask::empty(self.size);
        for y in 0..self.size {
            for x in 0..self.size {
                if self.get(x, y) {
                    for (dx, dy) in &offsets {
                        out.set(x as i64 + dx, y as i64 + dy);
                    }
                }
            }
        }
        out
    }

    /// `(1, 1, S, S)` tensor of zeros and ones.
    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        Ok(Tensor::from_slice(&self.data, (1, 1, self.size, self.size), device)?.to_dtype(dtype)?)
    }
}

/// Convex hull (counter-clockwise in image coordinates, no collinear points).
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(pts.len() * 2);
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
            {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn polygon_area(hull: &[[f64; 2]]) -> f64 {
    let n = hull.len();
    (0..n)
        .map(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        .abs()
        / 2.0
}

fn draw_segment(mask: &mut Mask, a: [f64; 2], b: [f64; 2]) {
    let steps = (b[0] - a[0]).abs().max((b[1] - a[1]).abs()).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let x = a[0] + (b[0] - a[0]) * t;
        let y = a[1] + (b[1] - a[1]) * t;
        mask.set(x.round() as i64, y.round() as i64);
    }
}

/// Fills the convex hull of `points`; collinear input yields a 1-px polyline.
fn fill_hull(points: &[[f32; 2]], size: usize) -> Mask {
    let pts: Vec<[f64; 2]> = points.iter().map(|p| [p[0] as f64, p[1] as f64]).collect();
    let hull = convex_hull(&pts);
    let mut mask = Mask::empty(size);
    if hull.len() < 3 || polygon_area(&hull) < HULL_EPS {
        match hull.len() {
            0 => {}
            1 => mask.set(hull[0][0].round() as i64, hull[0][1].round() as i64),
            _ => {
                for w in hull.windows(2) {
                    draw_segment(&mut mask, w[0], w[1]);
                }
            }
        }
        return mask;
    }
    let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in &hull {
        x_lo = x_lo.min(p[0]);
        x_hi = x_hi.max(p[0]);
        y_lo = y_lo.min(p[1]);
        y_hi = y_hi.max(p[1]);
    }
    let max = size as f64 - 1.0;
    let (x0, x1) = (x_lo.ceil().max(0.0) as usize, x_hi.floor().min(max));
    let (y0, y1) = (y_lo.ceil().max(0.0) as usize, y_hi.floor().min(max));
    if x1 < 0.0 || y1 < 0.0 {
        return mask;
    }
    let n = hull.len();
    for y in y0..=y1 as usize {
        for x in x0..=x1 as usize {
            let (px, py) = (x as f64, y as f64);
            let inside = (0..n).all(|i| {
                let (a, b) = (hull[i], hull[(i + 1) % n]);
                (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0]) >= -HULL_EPS
            });
            if inside {
                mask.set(x as i64, y as i64);
            }
        }
    }
    mask
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentMasks {
    /// Union of both eye hulls.
    pub eye: Mask,
    pub nose: Mask,
    pub lip: Mask,
}

/// Filled, dilated convex hulls of the eyes, nose and lips.
pub fn build_component_masks(lm: &LandmarkSet, size: usize, dilation_px: usize) -> ComponentMasks {
    let eye = fill_hull(&lm.points[RIGHT_EYE], size).union(&fill_hull(&lm.points[LEFT_EYE], size));
    let nose = fill_hull(lm.component(Component::Nose), size);
    let lip = fill_hull(lm.component(Component::Lips), size);
    ComponentMasks {
        eye: eye.dilated(dilation_px),
        nose: nose.dilated(dilation_px),
        lip: lip.dilated(dilation_px),
    }
}

/// Full-width band of every row strictly above the top of the eyebrows.
pub fn build_head_mask(lm: &LandmarkSet, size: usize) -> Mask {
    let top = lm.eyebrow_top() as f64;
    if top <= 0.0 {
        log::warn!("eyebrows of {} touch the top edge; head mask is empty", lm.image_id);
        return Mask::empty(size);
    }
    let rows = (top.ceil() as usize).min(size);
    Mask::from_fn(size, |_, y| y < rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskSource {
    /// Masks computed from an ID photo `x` (`M_fX`, hair band `M_hr`).
    ContentX,
    /// Masks computed from a portrait `y` (`M_fY`, Gat band `M_ht`).
    StyleY,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskBundle {
    pub eye: Mask,
    pub nose: Mask,
    pub lip: Mask,
    pub head: Mask,
    pub source: MaskSource,
}

impl MaskBundle {
    pub fn from_landmarks(
        lm: &LandmarkSet,
        size: usize,
        dilation_px: usize,
        source: MaskSource,
    ) -> Self {
        let ComponentMasks { eye, nose, lip } = build_component_masks(lm, size, dilation_px);
        Self {
            eye,
            nose,
            lip,
            head: build_head_mask(lm, size),
            source,
        }
    }

    /// All-zero masks, used when no face was found so mask losses contribute nothing.
    pub fn empty(size: usize, source: MaskSource) -> Self {
        Self {
            eye: Mask::empty(size),
            nose: Mask::empty(size),
            lip: Mask::empty(size),
            head: Mask::empty(size),
            source,
        }
    }

    pub fn size(&self) -> usize {
        self.eye.size()
    }

    pub fn mirrored(&self) -> Self {
        Self {
            eye: self.eye.mirrored(),
            nose: self.nose.mirrored(),
            lip: self.lip.mirrored(),
            head: self.head.mirrored(),
            source: self.source,
        }
    }

    pub fn check_size(&self, size: usize) -> Result<()> {
        for m in [&self.eye, &self.nose, &self.lip, &self.head] {
            if m.size() != size {
                return Err(Error::ShapeMismatch {
                    expected: format!("{size}x{size} mask"),
                    got: format!("{0}x{0}", m.size()),
                });
            }
        }
        Ok(())
    }
}

/// Tints the masked pixels of a canvas: eyes red, nose green, lips blue, head band yellow.
pub fn overlay_masks(image: &RawImage, masks: &MaskBundle) -> Result<RawImage> {
    masks.check_size(image.width())?;
    if image.height() != image.width() {
        return Err(Error::ShapeMismatch {
            expected: "square image".into(),
            got: format!("{}x{}", image.width(), image.height()),
        });
    }
    let layers = [
        (&masks.head, [255u8, 220, 0]),
        (&masks.eye, [255, 0, 0]),
        (&masks.nose, [0, 200, 0]),
        (&masks.lip, [0, 80, 255]),
    ];
    let mut out = image.clone();
    for y in 0..image.height() {
        for x in 0..image.width() {
            let mut px = image.pixel(x, y);
            for (mask, tint) in &layers {
                if mask.get(x, y) {
                    for c in 0..3 {
                        px[c] = ((px[c] as u16 + tint[c] as u16) / 2) as u8;
                    }
                }
            }
            out.set_pixel(x, y, px);
        }
    }
    Ok(out)
}
