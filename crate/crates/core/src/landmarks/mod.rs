//! 68-point facial landmarks and the binary masks derived from them.

mod detect;
mod masks;

pub use detect::{
    detect_landmarks, CachedDetector, LandmarkCache, LandmarkDetector, SyntheticFaceDetector,
};
pub use masks::{
    build_component_masks, build_head_mask, convex_hull, overlay_masks, ComponentMasks, Mask,
    MaskBundle, MaskSource,
};

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LANDMARK_COUNT: usize = 68;

/// Facial components in the 68-point annotation scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Component {
    Jaw,
    Eyebrows,
    Nose,
    Eyes,
    Lips,
}

impl Component {
    pub fn indices(self) -> Range<usize> {
        match self {
            Component::Jaw => 0..17,
            Component::Eyebrows => 17..27,
            Component::Nose => 27..36,
            Component::Eyes => 36..48,
            Component::Lips => 48..68,
        }
    }
}

pub const RIGHT_EYE: Range<usize> = 36..42;
pub const LEFT_EYE: Range<usize> = 42..48;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub points: Vec<[f32; 2]>,
    pub image_id: String,
}

impl LandmarkSet {
    pub fn new(points: Vec<[f32; 2]>, image_id: impl Into<String>) -> Result<Self> {
        if points.len() != LANDMARK_COUNT {
            return Err(Error::WrongCount {
                expected: LANDMARK_COUNT,
                got: points.len(),
            });
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Dataset("non-finite landmark coordinate".into()));
        }
        Ok(Self {
            points,
            image_id: image_id.into(),
        })
    }

    pub fn component(&self, c: Component) -> &[[f32; 2]] {
        &self.points[c.indices()]
    }

    /// Clamps every point into `[0, size - 1]`.
    pub fn clamped(&self, size: usize) -> Self {
        let hi = (size.max(1) - 1) as f32;
        Self {
            points: self
                .points
                .iter()
                .map(|[x, y]| [x.clamp(0.0, hi), y.clamp(0.0, hi)])
                .collect(),
            image_id: self.image_id.clone(),
        }
    }

    pub fn translated(&self, dx: f32, dy: f32) -> Self {
        Self {
            points: self.points.iter().map(|[x, y]| [x + dx, y + dy]).collect(),
            image_id: self.image_id.clone(),
        }
    }

    /// Horizontal mirror in a frame of the given width.
    pub fn mirrored(&self, width: usize) -> Self {
        let w = (width - 1) as f32;
        Self {
            points: self.points.iter().map(|[x, y]| [w - x, *y]).collect(),
            image_id: self.image_id.clone(),
        }
    }

    /// Uniform rescale, e.g. from a detection frame to a training frame.
    pub fn scaled(&self, factor: f32) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|[x, y]| [x * factor, y * factor])
                .collect(),
            image_id: self.image_id.clone(),
        }
    }

    /// Maps between resampled frames with pixel-center alignment,
    /// `p' = (p + 0.5) * factor - 0.5`.
    pub fn rescaled(&self, factor: f32) -> Self {
        self.translated(0.5, 0.5).scaled(factor).translated(-0.5, -0.5)
    }

    /// Smallest eyebrow y coordinate (top of the brows).
    pub fn eyebrow_top(&self) -> f32 {
        self.component(Component::Eyebrows)
            .iter()
            .map(|p| p[1])
            .fold(f32::INFINITY, f32::min)
    }

    /// Root-mean-square point distance to another set.
    pub fn rms_distance(&self, other: &LandmarkSet) -> f64 {
        let sum: f64 = self
            .points
            .iter()
            .zip(&other.points)
            .map(|(a, b)| {
                let dx = (a[0] - b[0]) as f64;
                let dy = (a[1] - b[1]) as f64;
                dx * dx + dy * dy
            })
            .sum();
        (sum / self.points.len() as f64).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn component_ranges_cover_all_points() {
        let mut seen = [false; LANDMARK_COUNT];
        for c in [
            Component::Jaw,
            Component::Eyebrows,
            Component::Nose,
            Component::Eyes,
            Component::Lips,
        ] {
            for i in c.indices() {
                assert!(!seen[i]);
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn wrong_point_count_rejected() {
        assert!(matches!(
            LandmarkSet::new(vec![[0.0, 0.0]; 67], "a"),
            Err(Error::WrongCount { got: 67, .. })
        ));
    }

    #[test]
    fn clamping_keeps_points_in_frame() {
        let mut pts = vec![[10.0, 10.0]; LANDMARK_COUNT];
        pts[0] = [-5.0, 300.0];
        let lm = LandmarkSet::new(pts, "a").unwrap().clamped(256);
        assert_eq!(lm.points[0], [0.0, 255.0]);
    }
}
