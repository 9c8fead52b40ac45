//! Deterministic capabilities for mock-generated images.
//!
//! [`SceneReader`] finds people, faces and objects by their palette colors
//! (see [`crate::generation::mock`]) and derives every capability answer
//! from pixel statistics, so crops and full frames get consistent answers
//! without any script.

use super::{
    AnalyzedFace, AttributePrediction, FaceAnalysisApi, FaceAttributeClassifier, FaceDetector,
    InferenceError, PersonDetector, Similarity, SimilarityScorer, VqaAnswer, VqaAnswerer,
    DEFAULT_LOGIT_SCALE,
};
use crate::gender::GenderLabel;
use crate::generation::mock::{FACE, FEMALE_BODY, MALE_BODY, OBJECT};
use crate::imaging::{sort_by_area_desc, BBox, ImageView};

const MIN_COMPONENT_PIXELS: usize = 4;

#[derive(Debug, Clone, Copy)]
pub struct SceneReader {
    pub logit_scale: f64,
}

impl Default for SceneReader {
    fn default() -> Self {
        SceneReader { logit_scale: DEFAULT_LOGIT_SCALE }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct PixelStats {
    male: usize,
    female: usize,
    face: usize,
    object: usize,
    total: usize,
}

impl PixelStats {
    fn of(image: &ImageView) -> Self {
        let mut s = PixelStats { total: (image.width() * image.height()) as usize, ..Default::default() };
        for p in image.pixels.pixels() {
            match p.0 {
                MALE_BODY => s.male += 1,
                FEMALE_BODY => s.female += 1,
                FACE => s.face += 1,
                OBJECT => s.object += 1,
                _ => {}
            }
        }
        s
    }

    fn body(&self) -> usize {
        self.male + self.female
    }

    fn male_share(&self) -> f64 {
        if self.body() == 0 {
            0.5
        } else {
            self.male as f64 / self.body() as f64
        }
    }

    fn dominant(&self) -> Option<(GenderLabel, f64)> {
        if self.body() == 0 {
            return None;
        }
        let m = self.male_share();
        Some(if m >= 0.5 { (GenderLabel::Male, m) } else { (GenderLabel::Female, 1.0 - m) })
    }

    fn presence(count: usize, total: usize) -> f64 {
        ((count as f64 / total.max(1) as f64) * 10.0).min(1.0)
    }

    /// Raw CLIP-like similarity of this image to a candidate text.
    fn similarity(&self, text: &str) -> f64 {
        let t = text.to_lowercase();
        let m = self.male_share();
        let has = |w: &str| t.split(|c: char| !c.is_alphanumeric()).any(|tok| tok == w);
        if has("uncertain") {
            0.20 + 0.10 * (1.0 - (2.0 * m - 1.0).abs()) * 0.5
        } else if has("female") || has("woman") {
            0.20 + 0.10 * (1.0 - m)
        } else if has("male") || has("man") {
            0.20 + 0.10 * m
        } else if has("object") {
            0.21 + 0.10 * Self::presence(self.object, self.total)
        } else if has("person") {
            0.20 + 0.10 * Self::presence(self.body() + self.face, self.total)
        } else {
            0.20
        }
    }
}

/// Bounding boxes of 4-connected regions of exactly `color`.
pub fn color_components(image: &ImageView, colors: &[[u8; 3]]) -> Vec<BBox> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let mut seen = vec![false; w * h];
    let mut boxes = Vec::new();
    let matches = |x: usize, y: usize| colors.contains(&image.pixels.get_pixel(x as u32, y as u32).0);
    let mut stack = Vec::new();
    for start in 0..w * h {
        if seen[start] || !matches(start % w, start / w) {
            continue;
        }
        let target = image.pixels.get_pixel((start % w) as u32, (start / w) as u32).0;
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let mut count = 0;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            count += 1;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            let mut push = |nx: usize, ny: usize| {
                let j = ny * w + nx;
                if !seen[j] && image.pixels.get_pixel(nx as u32, ny as u32).0 == target {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                push(x - 1, y);
            }
            if x + 1 < w {
                push(x + 1, y);
            }
            if y > 0 {
                push(x, y - 1);
            }
            if y + 1 < h {
                push(x, y + 1);
            }
        }
        if count >= MIN_COMPONENT_PIXELS {
            boxes.push(BBox::new(
                x0 as u32,
                y0 as u32,
                (x1 - x0 + 1) as u32,
                (y1 - y0 + 1) as u32,
                0.95,
            ));
        }
    }
    boxes
}

impl SimilarityScorer for SceneReader {
    fn score(&self, image: &ImageView, candidates: &[&str]) -> Result<Similarity, InferenceError> {
        let stats = PixelStats::of(image);
        let raw = candidates.iter().map(|c| stats.similarity(c)).collect();
        Ok(Similarity::from_raw(raw, self.logit_scale))
    }
}

impl VqaAnswerer for SceneReader {
    fn answer(&self, image: &ImageView, _question: &str) -> Result<VqaAnswer, InferenceError> {
        Ok(match PixelStats::of(image).dominant() {
            Some((GenderLabel::Male, _)) => VqaAnswer::Text("a male".into()),
            Some((GenderLabel::Female, _)) => VqaAnswer::Text("a female".into()),
            None => VqaAnswer::Text("there is no person in the picture".into()),
        })
    }
}

impl FaceDetector for SceneReader {
    fn detect_faces(&self, image: &ImageView) -> Result<Vec<BBox>, InferenceError> {
        Ok(color_components(image, &[FACE]))
    }
}

impl PersonDetector for SceneReader {
    fn detect_persons(&self, image: &ImageView) -> Result<Vec<BBox>, InferenceError> {
        let mut boxes = color_components(image, &[MALE_BODY, FEMALE_BODY]);
        sort_by_area_desc(&mut boxes);
        Ok(boxes)
    }
}

impl FaceAttributeClassifier for SceneReader {
    fn classify(&self, image: &ImageView) -> Result<AttributePrediction, InferenceError> {
        PixelStats::of(image)
            .dominant()
            .map(|(gender, confidence)| AttributePrediction { gender, confidence })
            .ok_or_else(|| InferenceError::Provider(format!("no person pixels in `{}`", image.id)))
    }
}

impl FaceAnalysisApi for SceneReader {
    fn analyze(&self, image: &ImageView) -> Result<Vec<AnalyzedFace>, InferenceError> {
        let persons = self.detect_persons(image)?;
        let faces = self.detect_faces(image)?;
        Ok(faces
            .into_iter()
            .filter_map(|face| {
                let owner = persons.iter().find(|p| {
                    face.x >= p.x && face.y >= p.y && face.x + face.w <= p.x + p.w && face.y + face.h <= p.y + p.h
                })?;
                let gender = self.classify(&image.crop(owner)).ok()?.gender;
                Some(AnalyzedFace { bbox: face, gender })
            })
            .collect())
    }
}
