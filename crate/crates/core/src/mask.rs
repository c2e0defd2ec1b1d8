//! Image layouts (2D boxes) and their binary latent-resolution masks.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectBox {
    pub label: String,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl ObjectBox {
    pub fn new(label: impl Into<String>, x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self {
            label: label.into(),
            x1,
            y1,
            x2,
            y2,
        }
    }

    fn validate(&self, width: usize, height: usize) -> Result<()> {
        let coords = [self.x1, self.y1, self.x2, self.y2];
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "box {:?} has non-finite coordinates",
                self.label
            )));
        }
        let ok = 0.0 <= self.x1
            && self.x1 < self.x2
            && self.x2 <= width as f64
            && 0.0 <= self.y1
            && self.y1 < self.y2
            && self.y2 <= height as f64;
        if !ok {
            return Err(Error::invalid(format!(
                "box {:?} ({}, {}, {}, {}) is empty or outside the {width}x{height} image",
                self.label, self.x1, self.y1, self.x2, self.y2
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub image_width: usize,
    pub image_height: usize,
    #[serde(default)]
    pub boxes: Vec<ObjectBox>,
}

impl Layout {
    pub fn empty(image_width: usize, image_height: usize) -> Self {
        Self {
            image_width,
            image_height,
            boxes: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::invalid("layout image dimensions must be positive"));
        }
        self.boxes
            .iter()
            .try_for_each(|b| b.validate(self.image_width, self.image_height))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let layout: Layout = serde_json::from_str(text).map_err(|e| Error::Config(format!("layout: {e}")))?;
        layout.validate()?;
        Ok(layout)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Binary `H×W` mask at latent resolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatentMask {
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl LatentMask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, false)
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self::filled(height, width, true)
    }

    fn filled(height: usize, width: usize, on: bool) -> Self {
        Self {
            height,
            width,
            bits: vec![u8::from(on); height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                bits.push(u8::from(f(r, c)));
            }
        }
        Self { height, width, bits }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.width + c] != 0
    }

    pub fn set(&mut self, r: usize, c: usize, on: bool) {
        self.bits[r * self.width + c] = u8::from(on);
    }

    /// Row-major entries, each exactly 0 or 1.
    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b != 0).count()
    }

    pub fn complement(&self) -> LatentMask {
        LatentMask {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().map(|&b| 1 - b).collect(),
        }
    }

    /// Chebyshev dilation by `radius` cells.
    pub fn dilate(&self, radius: usize) -> LatentMask {
        if radius == 0 {
            return self.clone();
        }
        LatentMask::from_fn(self.height, self.width, |r, c| {
            let (r0, r1) = (r.saturating_sub(radius), (r + radius).min(self.height - 1));
            let (c0, c1) = (c.saturating_sub(radius), (c + radius).min(self.width - 1));
            (r0..=r1).any(|rr| (c0..=c1).any(|cc| self.get(rr, cc)))
        })
    }
}

pub fn complement(mask: &LatentMask) -> LatentMask {
    mask.complement()
}

/// Footprint of one latent cell along one axis, in pixel units.
#[inline]
pub(crate) fn cell_span(index: usize, scale: f64) -> (f64, f64) {
    (index as f64 * scale, (index + 1) as f64 * scale)
}

/// Rasterize `layout` onto a `latent_h × latent_w` mask.
///
/// Cell `(r, c)` covers pixels `[c·sx, (c+1)·sx) × [r·sy, (r+1)·sy)` with
/// real-valued scales `sx = W/latent_w`, `sy = H/latent_h`, and is set when
/// that footprint overlaps any box with positive area.
pub fn rasterize_mask(layout: &Layout, latent_h: usize, latent_w: usize) -> Result<LatentMask> {
    if latent_h == 0 || latent_w == 0 {
        return Err(Error::invalid("latent mask dimensions must be positive"));
    }
    layout.validate()?;
    let sx = layout.image_width as f64 / latent_w as f64;
    let sy = layout.image_height as f64 / latent_h as f64;
    let mut mask = LatentMask::zeros(latent_h, latent_w);
    for b in &layout.boxes {
        // candidate range padded by one cell; the exact overlap test decides
        let c0 = ((b.x1 / sx).floor() as usize).saturating_sub(1);
        let c1 = ((b.x2 / sx).ceil() as usize + 1).min(latent_w);
        let r0 = ((b.y1 / sy).floor() as usize).saturating_sub(1);
        let r1 = ((b.y2 / sy).ceil() as usize + 1).min(latent_h);
        for r in r0..r1 {
            let (ya, yb) = cell_span(r, sy);
            if b.y1.max(ya) >= b.y2.min(yb) {
                continue;
            }
            for c in c0..c1 {
                let (xa, xb) = cell_span(c, sx);
                if b.x1.max(xa) < b.x2.min(xb) {
                    mask.set(r, c, true);
                }
            }
        }
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_layout_gives_zero_mask() {
        let m = rasterize_mask(&Layout::empty(64, 48), 6, 8).unwrap();
        assert_eq!(m.count_ones(), 0);
    }

    #[test]
    fn full_box_gives_full_mask() {
        let mut layout = Layout::empty(100, 37);
        layout.boxes.push(ObjectBox::new("Car", 0.0, 0.0, 100.0, 37.0));
        let m = rasterize_mask(&layout, 5, 13).unwrap();
        assert_eq!(m.count_ones(), 65);
    }

    #[test]
    fn aligned_box_sets_single_cell() {
        let mut layout = Layout::empty(64, 64);
        layout.boxes.push(ObjectBox::new("Car", 8.0, 8.0, 16.0, 16.0));
        let m = rasterize_mask(&layout, 8, 8).unwrap();
        assert_eq!(m.count_ones(), 1);
        assert!(m.get(1, 1));
    }

    #[test]
    fn partial_overlap_counts() {
        let mut layout = Layout::empty(64, 64);
        layout.boxes.push(ObjectBox::new("Pedestrian", 15.5, 8.0, 16.5, 9.0));
        let m = rasterize_mask(&layout, 8, 8).unwrap();
        assert!(m.get(1, 1) && m.get(1, 2));
        assert_eq!(m.count_ones(), 2);
    }

    #[test]
    fn out_of_bounds_box_is_rejected() {
        let mut layout = Layout::empty(64, 64);
        layout.boxes.push(ObjectBox::new("Car", 60.0, 0.0, 65.0, 10.0));
        assert!(matches!(rasterize_mask(&layout, 8, 8), Err(Error::InvalidArgument(_))));
        layout.boxes[0] = ObjectBox::new("Car", 10.0, 5.0, 10.0, 8.0);
        assert!(rasterize_mask(&layout, 8, 8).is_err());
    }

    #[test]
    fn complement_cases() {
        assert_eq!(LatentMask::zeros(3, 4).complement(), LatentMask::ones(3, 4));
        assert_eq!(LatentMask::ones(3, 4).complement(), LatentMask::zeros(3, 4));
        let checker = LatentMask::from_fn(4, 5, |r, c| (r + c) % 2 == 0);
        let inverted = LatentMask::from_fn(4, 5, |r, c| (r + c) % 2 == 1);
        assert_eq!(complement(&checker), inverted);
        assert_eq!(complement(&inverted), checker);
    }

    #[test]
    fn dilation_grows_by_radius() {
        let mut m = LatentMask::zeros(7, 7);
        m.set(3, 3, true);
        assert_eq!(m.dilate(0), m);
        assert_eq!(m.dilate(1).count_ones(), 9);
        assert_eq!(m.dilate(5).count_ones(), 49);
    }

    #[test]
    fn layout_json_schema() {
        let text = r#"{"image_width": 1248, "image_height": 368,
            "boxes": [{"label": "Car", "x1": 10, "y1": 150.5, "x2": 200, "y2": 300}]}"#;
        let layout = Layout::from_json(text).unwrap();
        assert_eq!(layout.boxes[0].y1, 150.5);
        let m = rasterize_mask(&layout, 46, 156).unwrap();
        assert!(m.get(20, 5));
        assert!(!m.get(0, 0));
    }
}
