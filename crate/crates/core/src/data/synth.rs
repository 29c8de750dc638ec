//! Synthetic infrared-style scenes: cool speckled background, warm upright
//! elliptical "persons" and a few warm distractor shapes that are not labelled.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BBox, Dataset, Image, PixelRect, Sample, HUMAN};
use crate::seed::PodRng;
use crate::{stream, PodError, Result};

const PLACEMENT_RETRIES: usize = 50;
/// Normalized radius below which a blob is at full intensity.
const CORE_RADIUS: f64 = 0.6;
const EDGE_SIGMA: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub image_size: usize,
    /// Inclusive range.
    pub persons_per_image: (usize, usize),
    pub blob_intensity: (f64, f64),
    pub background_level: (f64, f64),
    pub background_noise_level: f64,
    /// Person height as a fraction of the image side.
    pub person_height: (f64, f64),
    /// Person width / height.
    pub person_aspect: (f64, f64),
    /// Inclusive range of unlabelled warm objects.
    pub distractors_per_image: (usize, usize),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            image_size: 128,
            persons_per_image: (1, 2),
            blob_intensity: (0.65, 0.95),
            background_level: (0.1, 0.3),
            background_noise_level: 0.06,
            person_height: (0.3, 0.55),
            person_aspect: (0.35, 0.5),
            distractors_per_image: (0, 2),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |r: (f64, f64)| 0.0 <= r.0 && r.0 <= r.1 && r.1 <= 1.0;
        if self.image_size < 8 {
            return Err(PodError::config("image_size", "must be at least 8"));
        }
        if self.persons_per_image.0 > self.persons_per_image.1 {
            return Err(PodError::config("persons_per_image", "min exceeds max"));
        }
        if self.distractors_per_image.0 > self.distractors_per_image.1 {
            return Err(PodError::config("distractors_per_image", "min exceeds max"));
        }
        if !in_unit(self.blob_intensity) {
            return Err(PodError::config(
                "blob_intensity",
                "must be an ordered range in [0,1]",
            ));
        }
        if !in_unit(self.background_level) {
            return Err(PodError::config(
                "background_level",
                "must be an ordered range in [0,1]",
            ));
        }
        if !(0.0..=1.0).contains(&self.background_noise_level) {
            return Err(PodError::config(
                "background_noise_level",
                "must be in [0,1]",
            ));
        }
        if !in_unit(self.person_height) || self.person_height.0 <= 0.0 {
            return Err(PodError::config(
                "person_height",
                "must be an ordered range in (0,1]",
            ));
        }
        if !(self.person_aspect.0 > 0.0 && self.person_aspect.0 <= self.person_aspect.1) {
            return Err(PodError::config(
                "person_aspect",
                "must be a positive ordered range",
            ));
        }
        Ok(())
    }
}

/// Elliptical warm region; pixel `(x, y)` belongs to it when its center lies
/// within the unit normalized radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
    pub intensity: f64,
    pub is_person: bool,
}

impl Blob {
    fn radius_at(&self, x: usize, y: usize) -> f64 {
        let dx = (x as f64 + 0.5 - self.cx) / self.rx;
        let dy = (y as f64 + 0.5 - self.cy) / self.ry;
        (dx * dx + dy * dy).sqrt()
    }

    /// Tight pixel bounding box of the blob support, or `None` if it covers
    /// no pixel center.
    fn support(&self, size: usize) -> Option<PixelRect> {
        let x_lo = (self.cx - self.rx - 1.0).floor().max(0.0) as usize;
        let x_hi = ((self.cx + self.rx + 1.0).ceil() as usize).min(size);
        let y_lo = (self.cy - self.ry - 1.0).floor().max(0.0) as usize;
        let y_hi = ((self.cy + self.ry + 1.0).ceil() as usize).min(size);
        let (mut x1, mut y1, mut x2, mut y2) = (usize::MAX, usize::MAX, 0, 0);
        for y in y_lo..y_hi {
            for x in x_lo..x_hi {
                if self.radius_at(x, y) <= 1.0 {
                    x1 = x1.min(x);
                    y1 = y1.min(y);
                    x2 = x2.max(x + 1);
                    y2 = y2.max(y + 1);
                }
            }
        }
        (x1 != usize::MAX).then(|| PixelRect {
            x: x1,
            y: y1,
            w: x2 - x1,
            h: y2 - y1,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub image: Image,
    pub boxes: Vec<BBox>,
    /// Every placed blob, persons first in label order.
    pub blobs: Vec<Blob>,
    pub requested_persons: usize,
    pub placed_persons: usize,
}

fn overlaps(a: &PixelRect, b: &PixelRect, margin: usize) -> bool {
    a.x < b.x + b.w + margin
        && b.x < a.x + a.w + margin
        && a.y < b.y + b.h + margin
        && b.y < a.y + a.h + margin
}

fn uniform(rng: &mut PodRng, r: (f64, f64)) -> f64 {
    if r.1 > r.0 {
        rng.gen_range(r.0..r.1)
    } else {
        r.0
    }
}

pub fn synth_scene(config: &SynthConfig, rng: &mut PodRng) -> Result<SynthScene> {
    config.validate()?;
    let size = config.image_size;
    let s = size as f64;

    let requested = rng.gen_range(config.persons_per_image.0..=config.persons_per_image.1);
    let distractors =
        rng.gen_range(config.distractors_per_image.0..=config.distractors_per_image.1);

    let mut occupied: Vec<PixelRect> = Vec::new();
    let mut blobs = Vec::new();
    let mut boxes = Vec::new();

    for _ in 0..requested {
        for _ in 0..PLACEMENT_RETRIES {
            let h = uniform(rng, config.person_height) * s;
            let w = h * uniform(rng, config.person_aspect);
            let (rx, ry) = (w / 2.0, h / 2.0);
            if 2.0 * rx + 2.0 > s || 2.0 * ry + 2.0 > s {
                continue;
            }
            let blob = Blob {
                cx: rng.gen_range(rx + 1.0..s - rx - 1.0),
                cy: rng.gen_range(ry + 1.0..s - ry - 1.0),
                rx,
                ry,
                intensity: uniform(rng, config.blob_intensity),
                is_person: true,
            };
            let Some(rect) = blob.support(size) else {
                continue;
            };
            if occupied.iter().any(|o| overlaps(o, &rect, 2)) {
                continue;
            }
            occupied.push(rect);
            boxes.push(BBox::from_pixel_rect(HUMAN, rect, size, size));
            blobs.push(blob);
            break;
        }
    }
    let placed = blobs.len();

    for _ in 0..distractors {
        for _ in 0..PLACEMENT_RETRIES {
            // Round or wide warm objects; never person-shaped.
            let base = uniform(rng, config.person_height) * s;
            let (rx, ry) = if rng.gen_bool(0.5) {
                let r = base * rng.gen_range(0.12..0.22);
                (r, r)
            } else {
                let ry = base * rng.gen_range(0.1..0.18);
                (ry * rng.gen_range(1.6..2.6), ry)
            };
            if 2.0 * rx + 2.0 > s || 2.0 * ry + 2.0 > s || rx < 1.0 || ry < 1.0 {
                continue;
            }
            let blob = Blob {
                cx: rng.gen_range(rx + 1.0..s - rx - 1.0),
                cy: rng.gen_range(ry + 1.0..s - ry - 1.0),
                rx,
                ry,
                intensity: uniform(rng, config.blob_intensity),
                is_person: false,
            };
            let Some(rect) = blob.support(size) else {
                continue;
            };
            if occupied.iter().any(|o| overlaps(o, &rect, 2)) {
                continue;
            }
            occupied.push(rect);
            blobs.push(blob);
            break;
        }
    }

    let bg = uniform(rng, config.background_level);
    let noise = config.background_noise_level;
    let mut pixels = Vec::with_capacity(size * size);
    for _ in 0..size * size {
        let speckle = if noise > 0.0 {
            rng.gen_range(-noise..noise)
        } else {
            0.0
        };
        pixels.push(bg + speckle);
    }
    for blob in &blobs {
        let Some(rect) = blob.support(size) else {
            continue;
        };
        for y in rect.y..rect.y + rect.h {
            for x in rect.x..rect.x + rect.w {
                let r = blob.radius_at(x, y);
                if r > 1.0 {
                    continue;
                }
                let weight = if r <= CORE_RADIUS {
                    1.0
                } else {
                    (-((r - CORE_RADIUS) / EDGE_SIGMA).powi(2)).exp()
                };
                let p = &mut pixels[y * size + x];
                *p += weight * (blob.intensity - bg);
            }
        }
    }

    Ok(SynthScene {
        image: Image::from_clamped(size, size, pixels),
        boxes,
        blobs,
        requested_persons: requested,
        placed_persons: placed,
    })
}

/// Generates `count` scenes; scene `i` uses its own stream so datasets of
/// different lengths share their common prefix.
pub fn synth_dataset(config: &SynthConfig, count: usize, split: &str) -> Result<Dataset> {
    config.validate()?;
    let mut ds = Dataset::new(split);
    for i in 0..count {
        let mut rng = stream!(config.seed, "synth", split, i);
        let scene = synth_scene(config, &mut rng)?;
        ds.samples.push(Sample {
            name: format!("{split}_{i:05}"),
            image: scene.image,
            labels: scene.boxes,
        });
    }
    Ok(ds)
}
