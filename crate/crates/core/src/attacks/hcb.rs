//! 3x3 binary-cell patch with exhaustive pattern and position search.

use rayon::prelude::*;

use super::{patch_side, person_grid, require_person, AttackConfig, ImageObjective, PlacedPatch};
use crate::augment::{apply_patch, PatchPixels, PatchType};
use crate::data::{BBox, Image};
use crate::detector::DetectorModel;
use crate::Result;

/// Number of 3x3 binary patterns.
pub const HCB_PATTERNS: usize = 1 << 9;

/// Patch of `side` pixels (a multiple of 3) whose cell `(row, col)` is 1 when
/// bit `3 * row + col` of `pattern` is set.
pub fn hcb_pattern_patch(pattern: u16, side: usize) -> PatchPixels {
    assert!(
        side >= 3 && side.is_multiple_of(3),
        "hcb side must be a positive multiple of 3"
    );
    assert!((pattern as usize) < HCB_PATTERNS);
    let cell = side / 3;
    let mut values = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let bit = 3 * (y / cell) + x / cell;
            values.push(if pattern >> bit & 1 == 1 { 1.0 } else { 0.0 });
        }
    }
    PatchPixels::new(PatchType::External, side, values).expect("binary values are valid")
}

#[derive(Debug, Clone)]
pub struct HcbResult {
    pub placed: PlacedPatch,
    pub pattern: u16,
    pub objective: f64,
    pub side: usize,
    /// Candidate top-left positions, in search order.
    pub candidates: Vec<(usize, usize)>,
    pub patterns_per_location: usize,
}

pub(crate) fn hcb_side(config: &AttackConfig, person: &BBox, image: &Image) -> usize {
    let raw = patch_side(config.patch_fraction, person, image);
    let short = image.width().min(image.height());
    let mut side = (raw as f64 / 3.0).round().max(1.0) as usize * 3;
    while side > short {
        side -= 3;
    }
    side.max(3)
}

/// Objective of one `(pattern, position)` pair.
pub fn hcb_objective(
    model: &DetectorModel,
    image: &Image,
    gt: &[BBox],
    config: &AttackConfig,
    pattern: u16,
    x0: usize,
    y0: usize,
) -> Result<f64> {
    let person = require_person(gt)?;
    let side = hcb_side(config, &person, image);
    let scorer = ImageObjective::new(model, image, gt, person, config)?;
    scorer.score(&apply_patch(
        image,
        &hcb_pattern_patch(pattern, side),
        x0,
        y0,
    )?)
}

pub fn hcb_search(
    model: &DetectorModel,
    image: &Image,
    gt: &[BBox],
    config: &AttackConfig,
) -> Result<HcbResult> {
    config.validate()?;
    let person = require_person(gt)?;
    let side = hcb_side(config, &person, image);
    let candidates = person_grid(&person, side, side, config.location_grid, image);
    let scorer = ImageObjective::new(model, image, gt, person, config)?;
    let patches: Vec<PatchPixels> = (0..HCB_PATTERNS as u16)
        .map(|p| hcb_pattern_patch(p, side))
        .collect();

    let jobs: Vec<(usize, u16)> = (0..candidates.len())
        .flat_map(|c| (0..HCB_PATTERNS as u16).map(move |p| (c, p)))
        .collect();
    let scores: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(c, p)| {
            let (x0, y0) = candidates[c];
            scorer.score(&apply_patch(image, &patches[p as usize], x0, y0)?)
        })
        .collect();

    // First maximum in (position, pattern) order.
    let mut best = (0usize, f64::NEG_INFINITY);
    for (j, s) in scores.into_iter().enumerate() {
        let s = s?;
        if s > best.1 {
            best = (j, s);
        }
    }
    let (c, pattern) = jobs[best.0];
    let (x0, y0) = candidates[c];
    Ok(HcbResult {
        placed: PlacedPatch {
            patch: patches[pattern as usize].clone(),
            x0,
            y0,
            mask: None,
            per_image: true,
        },
        pattern,
        objective: best.1,
        side,
        candidates,
        patterns_per_location: HCB_PATTERNS,
    })
}

pub fn hcb_attack(
    model: &DetectorModel,
    image: &Image,
    gt: &[BBox],
    config: &AttackConfig,
) -> Result<PlacedPatch> {
    Ok(hcb_search(model, image, gt, config)?.placed)
}
