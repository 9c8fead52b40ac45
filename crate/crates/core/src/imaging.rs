//! Decoded images, bounding boxes and crops.

use std::fmt;

use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("cannot decode image `{id}`: {reason}")]
    Decode { id: String, reason: String },
    #[error("cannot encode image `{id}`: {reason}")]
    Encode { id: String, reason: String },
}

/// Axis-aligned box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub confidence: f64,
}

impl BBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32, confidence: f64) -> Self {
        BBox { x, y, w, h, confidence }
    }

    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }

    pub fn is_valid_in(&self, width: u32, height: u32) -> bool {
        self.w > 0
            && self.h > 0
            && self.x.checked_add(self.w).is_some_and(|r| r <= width)
            && self.y.checked_add(self.h).is_some_and(|b| b <= height)
            && (0.0..=1.0).contains(&self.confidence)
    }

    /// Grows the box by `ratio` of its size on every side, clamped to the image.
    pub fn padded(&self, ratio: f64, width: u32, height: u32) -> BBox {
        let px = (f64::from(self.w) * ratio).round() as u32;
        let py = (f64::from(self.h) * ratio).round() as u32;
        let x0 = self.x.saturating_sub(px);
        let y0 = self.y.saturating_sub(py);
        let x1 = (self.x + self.w).saturating_add(px).min(width);
        let y1 = (self.y + self.h).saturating_add(py).min(height);
        BBox { x: x0, y: y0, w: x1 - x0, h: y1 - y0, confidence: self.confidence }
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.x, self.y, self.w, self.h)
    }
}

/// Sorts largest area first; equal areas go leftmost first.
pub fn sort_by_area_desc(boxes: &mut [BBox]) {
    boxes.sort_by(|a, b| b.area().cmp(&a.area()).then(a.x.cmp(&b.x)).then(a.y.cmp(&b.y)));
}

pub fn largest(boxes: &[BBox]) -> Option<BBox> {
    let mut sorted = boxes.to_vec();
    sort_by_area_desc(&mut sorted);
    sorted.first().copied()
}

/// An image together with the id capability providers key on. Crops carry
/// the parent id plus the crop geometry, e.g. `img7#crop=10,4,40,80`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageView {
    pub id: String,
    pub pixels: RgbImage,
}

impl ImageView {
    pub fn new(id: impl Into<String>, pixels: RgbImage) -> Self {
        ImageView { id: id.into(), pixels }
    }

    pub fn decode_png(id: impl Into<String>, bytes: &[u8]) -> Result<Self, ImageError> {
        let id = id.into();
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
            .map_err(|e| ImageError::Decode { id: id.clone(), reason: e.to_string() })?;
        Ok(ImageView { id, pixels: img.to_rgb8() })
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, ImageError> {
        let mut buf = std::io::Cursor::new(Vec::new());
        self.pixels
            .write_to(&mut buf, ImageFormat::Png)
            .map_err(|e| ImageError::Encode { id: self.id.clone(), reason: e.to_string() })?;
        Ok(buf.into_inner())
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    /// Crop id for a region of this image.
    pub fn crop_id(&self, region: &BBox) -> String {
        format!("{}#crop={}", self.id, region)
    }

    /// Crops to `region` clamped to the image bounds.
    pub fn crop(&self, region: &BBox) -> ImageView {
        let x = region.x.min(self.width().saturating_sub(1));
        let y = region.y.min(self.height().saturating_sub(1));
        let w = region.w.min(self.width() - x).max(1);
        let h = region.h.min(self.height() - y).max(1);
        let clamped = BBox { x, y, w, h, confidence: region.confidence };
        let pixels = image::imageops::crop_imm(&self.pixels, x, y, w, h).to_image();
        ImageView { id: self.crop_id(&clamped), pixels }
    }
}
