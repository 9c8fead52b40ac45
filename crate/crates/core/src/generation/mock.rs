//! Procedural stand-in for a text-to-image model.
//!
//! Scenes are drawn with a fixed palette on gray noise so that downstream
//! capability stubs can recover people and faces from the pixels alone.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gender::GenderLabel;
use crate::imaging::{BBox, ImageView};
use crate::prompts::PromptSpec;

pub const MALE_BODY: [u8; 3] = [40, 80, 220];
pub const FEMALE_BODY: [u8; 3] = [220, 60, 130];
pub const FACE: [u8; 3] = [250, 205, 165];
pub const OBJECT: [u8; 3] = [40, 170, 60];

pub const DEFAULT_WIDTH: u32 = 160;
pub const DEFAULT_HEIGHT: u32 = 128;

const PERSON_W: u32 = 44;
const PERSON_H: u32 = 88;
const FACE_SIDE: u32 = 14;

pub fn body_color(gender: GenderLabel) -> [u8; 3] {
    match gender {
        GenderLabel::Male => MALE_BODY,
        GenderLabel::Female => FEMALE_BODY,
    }
}

/// What the mock plants into one image.
///
/// Text form: `M`, `F`, `noface:M`, `noperson`, `multi:M:0.6`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlantedScene {
    Single(GenderLabel),
    /// A person seen from behind: body without a visible face.
    NoFace(GenderLabel),
    NoPerson,
    /// Main person plus a second person of the opposite gender whose box
    /// area is `second_ratio` of the main box.
    Multiple { gender: GenderLabel, second_ratio: f64 },
}

impl fmt::Display for PlantedScene {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let g = |g: &GenderLabel| if *g == GenderLabel::Male { "M" } else { "F" };
        match self {
            PlantedScene::Single(gender) => write!(f, "{}", g(gender)),
            PlantedScene::NoFace(gender) => write!(f, "noface:{}", g(gender)),
            PlantedScene::NoPerson => f.write_str("noperson"),
            PlantedScene::Multiple { gender, second_ratio } => {
                write!(f, "multi:{}:{}", g(gender), second_ratio)
            }
        }
    }
}

impl FromStr for PlantedScene {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        match parts.as_slice() {
            [g] if g.eq_ignore_ascii_case("noperson") => Ok(PlantedScene::NoPerson),
            [g] => Ok(PlantedScene::Single(g.parse()?)),
            [kind, g] if kind.eq_ignore_ascii_case("noface") => {
                Ok(PlantedScene::NoFace(g.parse()?))
            }
            [kind, g, ratio] if kind.eq_ignore_ascii_case("multi") => {
                let second_ratio: f64 =
                    ratio.parse().map_err(|_| format!("bad area ratio `{ratio}`"))?;
                if !(second_ratio > 0.0 && second_ratio <= 1.0) {
                    return Err(format!("area ratio {second_ratio} outside (0, 1]"));
                }
                Ok(PlantedScene::Multiple { gender: g.parse()?, second_ratio })
            }
            _ => Err(format!("unrecognised scene `{s}`")),
        }
    }
}

impl Serialize for PlantedScene {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PlantedScene {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl PlantedScene {
    pub fn planted_gender(&self) -> Option<GenderLabel> {
        match self {
            PlantedScene::Single(g) | PlantedScene::NoFace(g) => Some(*g),
            PlantedScene::Multiple { gender, .. } => Some(*gender),
            PlantedScene::NoPerson => None,
        }
    }

    /// Whether a human would see one clear, gendered subject.
    pub fn is_clear(&self) -> bool {
        matches!(self, PlantedScene::Single(_))
    }
}

/// Mock backend settings, read from the backend descriptor's `config`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MockConfig {
    pub width: u32,
    pub height: u32,
    /// Scenes cycled by image index within a prompt.
    pub pattern: Vec<PlantedScene>,
    /// Per-prompt replacement patterns keyed by prompt id.
    pub overrides: BTreeMap<String, Vec<PlantedScene>>,
    /// Seeds that fail on every attempt.
    pub fail_seeds: Vec<u64>,
    /// Seeds that fail on the first attempt only.
    pub flaky_seeds: Vec<u64>,
}

impl Default for MockConfig {
    fn default() -> Self {
        MockConfig {
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
            pattern: vec![PlantedScene::Single(GenderLabel::Male), PlantedScene::Single(GenderLabel::Female)],
            overrides: BTreeMap::new(),
            fail_seeds: Vec::new(),
            flaky_seeds: Vec::new(),
        }
    }
}

impl MockConfig {
    pub fn scene_for(&self, prompt_id: &str, index: u32) -> PlantedScene {
        let pattern = self.overrides.get(prompt_id).unwrap_or(&self.pattern);
        if pattern.is_empty() {
            return PlantedScene::Single(GenderLabel::Male);
        }
        pattern[index as usize % pattern.len()]
    }
}

/// Sidecar written next to every mock image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDescriptor {
    pub prompt_id: String,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub scene: PlantedScene,
    pub face_count: usize,
    pub person_count: usize,
    pub planted_gender: Option<GenderLabel>,
    pub second_person_area_ratio: Option<f64>,
    pub persons: Vec<BBox>,
    pub faces: Vec<BBox>,
}

fn scene_seed(prompt_id: &str, seed: u64) -> u64 {
    // FNV-1a over the prompt id, mixed with the image seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in prompt_id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn fill(img: &mut RgbImage, b: &BBox, color: [u8; 3]) {
    for y in b.y..b.y + b.h {
        for x in b.x..b.x + b.w {
            img.put_pixel(x, y, Rgb(color));
        }
    }
}

fn draw_person(img: &mut RgbImage, body: BBox, gender: GenderLabel, with_face: bool) -> Option<BBox> {
    fill(img, &body, body_color(gender));
    if !with_face {
        return None;
    }
    let scale = f64::from(body.w) / f64::from(PERSON_W);
    let side = ((f64::from(FACE_SIDE) * scale).round() as u32).clamp(1, body.w.saturating_sub(2).max(1));
    let top = ((6.0 * scale).round() as u32).max(1);
    let face = BBox::new(body.x + (body.w - side) / 2, body.y + top, side, side, 1.0);
    fill(img, &face, FACE);
    Some(face)
}

/// Renders `scene` deterministically from `(prompt, seed)`.
pub fn render_scene(
    prompt: &PromptSpec,
    seed: u64,
    scene: PlantedScene,
    width: u32,
    height: u32,
) -> (ImageView, SceneDescriptor) {
    let mut rng = ChaCha8Rng::seed_from_u64(scene_seed(&prompt.id, seed));
    let mut img = RgbImage::from_fn(width, height, |_, _| {
        let v: u8 = rng.random_range(90..=200);
        Rgb([v, v, v])
    });
    let mut persons = Vec::new();
    let mut faces = Vec::new();
    let mut second_ratio = None;

    let place_main = |rng: &mut ChaCha8Rng| {
        let max_x = (width / 2).saturating_sub(PERSON_W).max(4);
        let x = rng.random_range(4..=max_x.max(4));
        let y = rng.random_range(height.saturating_sub(PERSON_H + 20).min(20)..=height - PERSON_H - 2);
        BBox::new(x, y, PERSON_W, PERSON_H, 1.0)
    };

    match scene {
        PlantedScene::Single(g) | PlantedScene::NoFace(g) => {
            let body = place_main(&mut rng);
            let with_face = matches!(scene, PlantedScene::Single(_));
            faces.extend(draw_person(&mut img, body, g, with_face));
            persons.push(body);
        }
        PlantedScene::NoPerson => {
            let x = rng.random_range(4..width - 40);
            let y = rng.random_range(4..height - 40);
            fill(&mut img, &BBox::new(x, y, 32, 32, 1.0), OBJECT);
        }
        PlantedScene::Multiple { gender, second_ratio: ratio } => {
            let body = place_main(&mut rng);
            faces.extend(draw_person(&mut img, body, gender, true));
            persons.push(body);
            let s = ratio.sqrt();
            let w2 = ((f64::from(PERSON_W) * s).round() as u32).max(4);
            let h2 = ((f64::from(PERSON_H) * s).round() as u32).max(6);
            let x_lo = width / 2 + 14;
            let x2 = rng.random_range(x_lo..=(width - w2 - 2).max(x_lo));
            let y2 = rng.random_range(2..=height - h2 - 2);
            let second = BBox::new(x2, y2, w2, h2, 1.0);
            faces.extend(draw_person(&mut img, second, gender.opposite(), true));
            persons.push(second);
            second_ratio = Some(ratio);
        }
    }

    let descriptor = SceneDescriptor {
        prompt_id: prompt.id.clone(),
        seed,
        width,
        height,
        scene,
        face_count: faces.len(),
        person_count: persons.len(),
        planted_gender: scene.planted_gender(),
        second_person_area_ratio: second_ratio,
        persons,
        faces,
    };
    (ImageView::new(format!("{}-{seed}", prompt.id), img), descriptor)
}

/// PNG bytes plus the scene sidecar for one mock generation.
pub fn mock_generate(
    prompt: &PromptSpec,
    seed: u64,
    scene: PlantedScene,
    config: &MockConfig,
) -> (Vec<u8>, SceneDescriptor) {
    let (view, descriptor) = render_scene(prompt, seed, scene, config.width, config.height);
    let png = view.encode_png().expect("in-memory PNG encoding");
    (png, descriptor)
}
