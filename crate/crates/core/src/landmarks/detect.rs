use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::Path;

use super::LandmarkSet;
use crate::data::{ImageSample, RawImage};
use crate::error::{Error, Result};
use crate::synthetic::{Bar, Ellipse, FaceGeometry};

/// Finds 68 landmarks in an 8-bit (typically sharpened) image.
pub trait LandmarkDetector: Send + Sync {
    fn detect(&self, image: &RawImage, image_id: &str) -> Result<LandmarkSet>;
}

/// Runs `detector` on the sharpened image and maps the result into the
/// sample's frame, clamped to its bounds.
pub fn detect_landmarks(
    detector: &dyn LandmarkDetector,
    sample: &ImageSample,
    sharpened: &RawImage,
) -> Result<LandmarkSet> {
    if sharpened.width() != sharpened.height() {
        return Err(Error::ShapeMismatch {
            expected: "square detection image".into(),
            got: format!("{}x{}", sharpened.width(), sharpened.height()),
        });
    }
    let lm = detector.detect(sharpened, &sample.id)?;
    let factor = sample.size() as f32 / sharpened.width() as f32;
    Ok(lm.rescaled(factor).clamped(sample.size()))
}

/// Landmarks keyed by image id, stored as JSON `{ id: [[x, y]; 68] }`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LandmarkCache {
    entries: BTreeMap<String, LandmarkSet>,
}

impl LandmarkCache {
    pub fn insert(&mut self, lm: LandmarkSet) {
        self.entries.insert(lm.image_id.clone(), lm);
    }

    pub fn get(&self, id: &str) -> Option<&LandmarkSet> {
        self.entries.get(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        let raw: BTreeMap<&str, &Vec<[f32; 2]>> =
            self.entries.iter().map(|(k, v)| (k.as_str(), &v.points)).collect();
        Ok(serde_json::to_string_pretty(&raw)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: BTreeMap<String, Vec<[f32; 2]>> = serde_json::from_str(text)?;
        let mut cache = Self::default();
        for (id, points) in raw {
            cache.insert(LandmarkSet::new(points, id)?);
        }
        Ok(cache)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Serves precomputed landmarks — e.g. exported from an external 68-point
/// shape predictor — by image id.
#[derive(Debug, Clone, Default)]
pub struct CachedDetector {
    pub cache: LandmarkCache,
}

impl LandmarkDetector for CachedDetector {
    fn detect(&self, _image: &RawImage, image_id: &str) -> Result<LandmarkSet> {
        self.cache
            .get(image_id)
            .cloned()
            .ok_or_else(|| Error::NoFaceDetected(image_id.to_string()))
    }
}

/// Rule-based detector for the procedurally generated faces in
/// [`crate::synthetic`].
///
/// Segments skin by chromaticity and relative brightness, fits the face
/// ellipse to the largest skin component, then reads the brows, eyes, nose and
/// lips off the holes enclosed by skin and rebuilds the 68-point layout from
/// the fitted [`FaceGeometry`].
#[derive(Debug, Clone)]
pub struct SyntheticFaceDetector {
    /// Minimum share of the image covered by the face component.
    pub min_face_fraction: f64,
    /// Skin must be at least this fraction of the reference skin brightness.
    pub skin_brightness: f64,
}

impl Default for SyntheticFaceDetector {
    fn default() -> Self {
        Self {
            min_face_fraction: 0.02,
            skin_brightness: 0.86,
        }
    }
}

struct Stats {
    rn: Vec<f64>,
    gn: Vec<f64>,
    bn: Vec<f64>,
    lum: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Blob {
    pixels: Vec<usize>,
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

impl Blob {
    fn area(&self) -> usize {
        self.pixels.len()
    }

    fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) as f64 / 2.0, (self.y0 + self.y1) as f64 / 2.0)
    }

    fn mean(&self, v: &[f64]) -> f64 {
        self.pixels.iter().map(|&i| v[i]).sum::<f64>() / self.area() as f64
    }

    fn as_bar(&self) -> Bar {
        Bar {
            x0: self.x0 as f32,
            x1: self.x1 as f32,
            y0: self.y0 as f32,
            y1: self.y1 as f32,
        }
    }

    fn as_ellipse(&self) -> Ellipse {
        let (cx, cy) = self.center();
        Ellipse {
            cx: cx as f32,
            cy: cy as f32,
            rx: (self.x1 - self.x0 + 1) as f32 / 2.0,
            ry: (self.y1 - self.y0 + 1) as f32 / 2.0,
        }
    }
}

/// 4-connected components of `mask` restricted to a window.
fn components(mask: &[bool], w: usize, window: (usize, usize, usize, usize)) -> Vec<Blob> {
    let (wx0, wy0, wx1, wy1) = window;
    let mut seen = vec![false; mask.len()];
    let mut blobs = Vec::new();
    for y in wy0..=wy1 {
        for x in wx0..=wx1 {
            let start = y * w + x;
            if !mask[start] || seen[start] {
                continue;
            }
            let mut blob = Blob { pixels: Vec::new(), x0: x, x1: x, y0: y, y1: y };
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            while let Some(i) = queue.pop_front() {
                let (px, py) = (i % w, i / w);
                blob.pixels.push(i);
                blob.x0 = blob.x0.min(px);
                blob.x1 = blob.x1.max(px);
                blob.y0 = blob.y0.min(py);
                blob.y1 = blob.y1.max(py);
                let mut visit = |nx: usize, ny: usize| {
                    let j = ny * w + nx;
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                };
                if px > wx0 {
                    visit(px - 1, py);
                }
                if px < wx1 {
                    visit(px + 1, py);
                }
                if py > wy0 {
                    visit(px, py - 1);
                }
                if py < wy1 {
                    visit(px, py + 1);
                }
            }
            blobs.push(blob);
        }
    }
    blobs
}

fn percentile(mut v: Vec<f64>, q: f64) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    v[((v.len() - 1) as f64 * q).round() as usize]
}

impl SyntheticFaceDetector {
    fn stats(image: &RawImage) -> Stats {
        let n = image.width() * image.height();
        let mut s = Stats {
            rn: Vec::with_capacity(n),
            gn: Vec::with_capacity(n),
            bn: Vec::with_capacity(n),
            lum: image.luma(),
        };
        for p in image.pixels().chunks_exact(3) {
            let (r, g, b) = (p[0] as f64, p[1] as f64, p[2] as f64);
            let sum = r + g + b + 1e-6;
            s.rn.push(r / sum);
            s.gn.push(g / sum);
            s.bn.push(b / sum);
        }
        s
    }

    fn skin_chroma(s: &Stats, i: usize) -> bool {
        (0.36..=0.47).contains(&s.rn[i])
            && (0.29..=0.36).contains(&s.gn[i])
            && (0.19..=0.32).contains(&s.bn[i])
            && s.lum[i] > 8.0
    }

    fn fit(&self, image: &RawImage) -> Option<FaceGeometry> {
        let (w, h) = (image.width(), image.height());
        let s = Self::stats(image);
        let n = w * h;
        let chroma: Vec<bool> = (0..n).map(|i| Self::skin_chroma(&s, i)).collect();
        let reference = percentile(
            (0..n).filter(|&i| chroma[i]).map(|i| s.lum[i]).collect(),
            0.9,
        );
        if reference <= 0.0 {
            return None;
        }
        let skin: Vec<bool> = (0..n)
            .map(|i| chroma[i] && s.lum[i] >= self.skin_brightness * reference)
            .collect();
        let face = components(&skin, w, (0, 0, w - 1, h - 1))
            .into_iter()
            .max_by_key(Blob::area)?;
        if (face.area() as f64) < self.min_face_fraction * n as f64 {
            return None;
        }

        // Row extents of the face component; the widest band sits on the ellipse center.
        let mut extent = vec![(usize::MAX, 0usize); h];
        for &i in &face.pixels {
            let (x, y) = (i % w, i / w);
            extent[y].0 = extent[y].0.min(x);
            extent[y].1 = extent[y].1.max(x);
        }
        let widths: Vec<usize> = extent
            .iter()
            .map(|&(a, b)| if a == usize::MAX { 0 } else { b - a + 1 })
            .collect();
        let max_w = *widths.iter().max()?;
        let band: Vec<usize> = (0..h).filter(|&y| widths[y] + 2 >= max_w).collect();
        let cy = band.iter().sum::<usize>() as f64 / band.len() as f64;
        let cx = band
            .iter()
            .map(|&y| (extent[y].0 + extent[y].1) as f64 / 2.0)
            .sum::<f64>()
            / band.len() as f64;
        let rx = max_w as f64 / 2.0;
        let col = cx.round() as usize;
        let bottom = face
            .pixels
            .iter()
            .filter(|&&i| i % w == col)
            .map(|&i| i / w)
            .max()?;
        let ry = bottom as f64 - cy + 0.5;
        if ry <= 0.0 {
            return None;
        }

        // Non-skin pixels enclosed by the face component are the facial features.
        let (bx0, by0, bx1, by1) = (face.x0, face.y0, face.x1, face.y1);
        let non_skin: Vec<bool> = skin.iter().map(|&v| !v).collect();
        let holes: Vec<Blob> = components(&non_skin, w, (bx0, by0, bx1, by1))
            .into_iter()
            .filter(|b| b.x0 > bx0 && b.x1 < bx1 && b.y0 > by0 && b.y1 < by1)
            .filter(|b| b.area() >= 6)
            .collect();

        let lip_idx = holes
            .iter()
            .enumerate()
            .filter(|(_, b)| b.mean(&s.rn) > 0.48 && b.center().1 > cy)
            .max_by_key(|(_, b)| b.area())
            .map(|(i, _)| i)?;
        let lips = holes[lip_idx].clone();

        let mut dark: Vec<&Blob> = holes
            .iter()
            .enumerate()
            .filter(|&(i, b)| i != lip_idx && b.mean(&s.lum) < 0.55 * reference)
            .map(|(_, b)| b)
            .collect();
        dark.sort_by_key(|b| std::cmp::Reverse(b.area()));
        if dark.len() < 4 {
            return None;
        }
        let mut four: Vec<&Blob> = dark[..4].to_vec();
        four.sort_by(|a, b| a.center().1.total_cmp(&b.center().1));
        let (mut brows, mut eyes) = (four[..2].to_vec(), four[2..].to_vec());
        brows.sort_by(|a, b| a.center().0.total_cmp(&b.center().0));
        eyes.sort_by(|a, b| a.center().0.total_cmp(&b.center().0));
        let eye_y = (eyes[0].center().1 + eyes[1].center().1) / 2.0;
        if brows.iter().any(|b| b.center().1 >= eye_y) {
            return None;
        }

        let nose = holes
            .iter()
            .enumerate()
            .filter(|&(i, b)| {
                let (x, y) = b.center();
                i != lip_idx
                    && (x - cx).abs() < 0.2 * rx
                    && y > eye_y
                    && y < lips.center().1
                    && (0.55..0.95).contains(&(b.mean(&s.lum) / reference))
            })
            .max_by_key(|(_, b)| b.area())
            .map(|(_, b)| b.as_bar())?;

        Some(FaceGeometry {
            face: Ellipse {
                cx: cx as f32,
                cy: cy as f32,
                rx: rx as f32,
                ry: ry as f32,
            },
            brows: [brows[0].as_bar(), brows[1].as_bar()],
            eyes: [eyes[0].as_ellipse(), eyes[1].as_ellipse()],
            nose,
            lips: lips.as_ellipse(),
        })
    }

    /// Fitted face geometry, for debugging overlays.
    pub fn fit_geometry(&self, image: &RawImage) -> Option<FaceGeometry> {
        self.fit(image)
    }
}

impl LandmarkDetector for SyntheticFaceDetector {
    fn detect(&self, image: &RawImage, image_id: &str) -> Result<LandmarkSet> {
        let g = self
            .fit(image)
            .ok_or_else(|| Error::NoFaceDetected(image_id.to_string()))?;
        let size = image.width().max(image.height());
        Ok(g.landmarks(image_id).clamped(size))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Domain;

    #[test]
    fn blank_gray_has_no_face() {
        let img = RawImage::filled(256, 256, [128, 128, 128], Domain::Photo).unwrap();
        let err = SyntheticFaceDetector::default().detect(&img, "gray").unwrap_err();
        assert!(matches!(err, Error::NoFaceDetected(id) if id == "gray"));
    }

    #[test]
    fn cache_round_trips_through_json() {
        let pts: Vec<[f32; 2]> = (0..68).map(|i| [i as f32, 2.0 * i as f32]).collect();
        let mut cache = LandmarkCache::default();
        cache.insert(LandmarkSet::new(pts, "a").unwrap());
        let back = LandmarkCache::from_json(&cache.to_json().unwrap()).unwrap();
        assert_eq!(back, cache);
        let det = CachedDetector { cache: back };
        let img = RawImage::filled(4, 4, [0, 0, 0], Domain::Photo).unwrap();
        assert!(det.detect(&img, "a").is_ok());
        assert!(matches!(det.detect(&img, "b"), Err(Error::NoFaceDetected(_))));
    }
}
