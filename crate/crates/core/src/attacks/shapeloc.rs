//! Shape-and-location binary patch, greedy over a union of rectangles.
//!
//! Each step adds the candidate rectangle (size, position on the person,
//! fill 0 or 1) that most increases the objective while the union stays
//! within the area budget. The search stops after `max_rects` rectangles or
//! when no candidate improves the objective, so the recorded objective
//! sequence never decreases.

use rayon::prelude::*;

use super::{
    person_grid, rect_mask_area, require_person, AttackConfig, ImageObjective, PlacedPatch,
};
use crate::augment::{PatchPixels, PatchType};
use crate::data::{BBox, Image, PixelRect};
use crate::detector::DetectorModel;
use crate::Result;

const WIDTH_FRACTIONS: [f64; 3] = [0.3, 0.6, 0.9];
const HEIGHT_FRACTIONS: [f64; 3] = [0.1, 0.2, 0.3];

#[derive(Debug, Clone)]
pub struct ShapeLocResult {
    pub placed: PlacedPatch,
    /// Accepted rectangles with their fill value, in order.
    pub rects: Vec<(PixelRect, f64)>,
    /// Objective before any rectangle, then after each accepted one.
    pub objectives: Vec<f64>,
    pub area: usize,
    pub budget: usize,
}

fn paint(image: &Image, rects: &[(PixelRect, f64)]) -> Image {
    let mut out = image.clone();
    for (r, v) in rects {
        for y in r.y..r.y + r.h {
            for x in r.x..r.x + r.w {
                out.set(x, y, *v);
            }
        }
    }
    out
}

/// Packs painted rectangles into a square patch with a write mask.
fn to_placed(image: &Image, rects: &[(PixelRect, f64)]) -> PlacedPatch {
    if rects.is_empty() {
        return PlacedPatch {
            patch: PatchPixels::new(PatchType::External, 1, vec![0.0]).expect("valid"),
            x0: 0,
            y0: 0,
            mask: Some(vec![false]),
            per_image: true,
        };
    }
    let x1 = rects.iter().map(|(r, _)| r.x).min().unwrap_or(0);
    let y1 = rects.iter().map(|(r, _)| r.y).min().unwrap_or(0);
    let x2 = rects.iter().map(|(r, _)| r.x + r.w).max().unwrap_or(0);
    let y2 = rects.iter().map(|(r, _)| r.y + r.h).max().unwrap_or(0);
    let side = (x2 - x1)
        .max(y2 - y1)
        .min(image.width().min(image.height()));
    let x0 = x1.min(image.width() - side);
    let y0 = y1.min(image.height() - side);
    let mut values = vec![0.0; side * side];
    let mut mask = vec![false; side * side];
    for (r, v) in rects {
        for y in r.y..r.y + r.h {
            for x in r.x..r.x + r.w {
                let i = (y - y0) * side + (x - x0);
                values[i] = *v;
                mask[i] = true;
            }
        }
    }
    PlacedPatch {
        patch: PatchPixels::new(PatchType::External, side, values).expect("binary values"),
        x0,
        y0,
        mask: Some(mask),
        per_image: true,
    }
}

fn candidates(person: &BBox, image: &Image, grid: usize) -> Vec<(PixelRect, f64)> {
    let (pw, ph) = (
        person.bw * image.width() as f64,
        person.bh * image.height() as f64,
    );
    let mut out = Vec::new();
    for &fw in &WIDTH_FRACTIONS {
        for &fh in &HEIGHT_FRACTIONS {
            let w = ((fw * pw).round() as usize).clamp(1, image.width());
            let h = ((fh * ph).round() as usize).clamp(1, image.height());
            for (x, y) in person_grid(person, w, h, grid, image) {
                for value in [0.0, 1.0] {
                    out.push((PixelRect { x, y, w, h }, value));
                }
            }
        }
    }
    out
}

pub fn shapeloc_search(
    model: &DetectorModel,
    image: &Image,
    gt: &[BBox],
    config: &AttackConfig,
) -> Result<ShapeLocResult> {
    config.validate()?;
    let person = require_person(gt)?;
    let scorer = ImageObjective::new(model, image, gt, person, config)?;
    let person_area = person.bw * image.width() as f64 * person.bh * image.height() as f64;
    let budget = (config.area_budget * person_area).floor() as usize;
    let pool = candidates(&person, image, config.location_grid);

    let mut rects: Vec<(PixelRect, f64)> = Vec::new();
    let mut objectives = vec![scorer.score(image)?];
    for _ in 0..config.max_rects {
        let feasible: Vec<&(PixelRect, f64)> = pool
            .iter()
            .filter(|c| {
                let mut trial = rects.clone();
                trial.push(**c);
                rect_mask_area(&trial) <= budget
            })
            .collect();
        let scores: Vec<Result<f64>> = feasible
            .par_iter()
            .map(|c| {
                let mut trial = rects.clone();
                trial.push(**c);
                scorer.score(&paint(image, &trial))
            })
            .collect();
        let mut best: Option<(usize, f64)> = None;
        for (i, s) in scores.into_iter().enumerate() {
            let s = s?;
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        let current = *objectives.last().expect("seeded with clean objective");
        match best {
            Some((i, s)) if s > current => {
                rects.push(*feasible[i]);
                objectives.push(s);
            }
            _ => break,
        }
    }

    let area = rect_mask_area(&rects);
    Ok(ShapeLocResult {
        placed: to_placed(image, &rects),
        rects,
        objectives,
        area,
        budget,
    })
}

pub fn shapeloc_attack(
    model: &DetectorModel,
    image: &Image,
    gt: &[BBox],
    config: &AttackConfig,
) -> Result<PlacedPatch> {
    Ok(shapeloc_search(model, image, gt, config)?.placed)
}
