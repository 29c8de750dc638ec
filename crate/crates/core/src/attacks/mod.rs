//! Digital-space adversarial patch attacks.
//!
//! * `noise`: i.i.d. uniform patch.
//! * `universal`: one scene-agnostic patch maximizing the mean detection loss
//!   by projected gradient ascent.
//! * `hcb`: per-image 3x3 grid of binary cells, exhaustive over all 512
//!   patterns and a coarse grid of positions on the person.
//! * `shapeloc`: per-image binary shape built greedily from up to `k`
//!   rectangles within an area budget.

mod archive;
mod hcb;
mod scenario;
mod shapeloc;
mod universal;

use serde::{Deserialize, Serialize};

use crate::augment::{make_patch, PatchPixels, PatchType};
use crate::data::{BBox, Image, PixelRect, HUMAN};
use crate::detector::{decode, ClassWeights, DetectorModel};
use crate::eval::iou;
use crate::seed::PodRng;
use crate::{PodError, Result};

pub use archive::{read_patch_archive, write_patch_archive, PatchArchiveMeta};
pub use hcb::{hcb_attack, hcb_objective, hcb_pattern_patch, hcb_search, HcbResult, HCB_PATTERNS};
pub use scenario::apply_attack_scenario;
pub use shapeloc::{shapeloc_attack, shapeloc_search, ShapeLocResult};
pub use universal::{
    optimize_universal_patch, optimize_universal_patch_scored, universal_objective,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Noise,
    Universal,
    Hcb,
    Shapeloc,
}

impl AttackKind {
    pub const ALL: [AttackKind; 4] = [
        AttackKind::Noise,
        AttackKind::Universal,
        AttackKind::Hcb,
        AttackKind::Shapeloc,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AttackKind::Noise => "noise",
            AttackKind::Universal => "universal",
            AttackKind::Hcb => "hcb",
            AttackKind::Shapeloc => "shapeloc",
        }
    }
}

impl std::str::FromStr for AttackKind {
    type Err = PodError;

    fn from_str(s: &str) -> Result<Self> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                PodError::config(
                    "kind",
                    format!("unknown attack `{s}` (expected noise, universal, hcb, shapeloc)"),
                )
            })
    }
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocationPolicy {
    /// Centered on the target person.
    FixedOnPerson,
    /// Best of a coarse grid of positions over the target person.
    GridSearch,
    /// Uniform over the image.
    Random,
}

/// Score maximized by the per-image attacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackObjective {
    /// Clean minus patched maximum human confidence among candidates with
    /// IoU >= 0.5 to the target person.
    ConfidenceDrop,
    /// Total detection loss against the ground truth.
    DetectionLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// Patch side relative to the larger side of the target person box.
    pub patch_fraction: f64,
    pub steps: usize,
    pub step_size: f64,
    pub location_policy: LocationPolicy,
    pub seed: u64,
    /// Images per universal-patch ascent step.
    pub batch_size: usize,
    /// Stored resolution of the universal patch; rescaled when placed.
    pub base_side: usize,
    pub objective: AttackObjective,
    pub class_weights: ClassWeights,
    /// Positions per axis for grid location search.
    pub location_grid: usize,
    /// Maximum rectangles in a shape-location patch.
    pub max_rects: usize,
    /// Shape-location area budget as a fraction of the person box area.
    pub area_budget: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            kind: AttackKind::Noise,
            patch_fraction: 0.3,
            steps: 200,
            step_size: 0.5,
            location_policy: LocationPolicy::FixedOnPerson,
            seed: 0,
            batch_size: 16,
            base_side: 16,
            objective: AttackObjective::ConfidenceDrop,
            class_weights: ClassWeights::default(),
            location_grid: 5,
            max_rects: 3,
            area_budget: 0.15,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.patch_fraction > 0.0 && self.patch_fraction <= 1.0) {
            return Err(PodError::config(
                "attack.patch_fraction",
                "must be in (0, 1]",
            ));
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(PodError::config(
                "attack.step_size",
                "must be finite and >= 0",
            ));
        }
        if self.batch_size == 0 || self.base_side == 0 || self.location_grid == 0 {
            return Err(PodError::config(
                "attack",
                "batch_size, base_side and location_grid must be positive",
            ));
        }
        if !(self.area_budget > 0.0 && self.area_budget <= 1.0) {
            return Err(PodError::config("attack.area_budget", "must be in (0, 1]"));
        }
        Ok(())
    }
}

/// A patch at a position in a specific image. `mask`, when present, selects
/// which patch pixels are written (row-major over the patch square).
#[derive(Debug, Clone, PartialEq)]
pub struct PlacedPatch {
    pub patch: PatchPixels,
    pub x0: usize,
    pub y0: usize,
    pub mask: Option<Vec<bool>>,
    /// Image-dependent (true) or universal (false).
    pub per_image: bool,
}

impl PlacedPatch {
    pub fn apply(&self, image: &Image) -> Result<Image> {
        let l = self.patch.side();
        if self.x0 + l > image.width() || self.y0 + l > image.height() {
            return Err(PodError::contract("placed patch exceeds image bounds"));
        }
        let mut out = image.clone();
        for y in 0..l {
            for x in 0..l {
                if self.mask.as_ref().is_none_or(|m| m[y * l + x]) {
                    out.set(self.x0 + x, self.y0 + y, self.patch.get(x, y));
                }
            }
        }
        Ok(out)
    }

    /// Number of pixels written.
    pub fn area(&self) -> usize {
        match &self.mask {
            Some(m) => m.iter().filter(|&&b| b).count(),
            None => self.patch.side() * self.patch.side(),
        }
    }

    pub fn is_binary(&self) -> bool {
        self.patch.values().iter().all(|&v| v == 0.0 || v == 1.0)
    }
}

pub fn noise_patch(side: usize, rng: &mut PodRng) -> Result<PatchPixels> {
    make_patch(PatchType::Noise, side, None, rng)
}

/// Largest human box, the default attack target.
pub(crate) fn target_person(gt: &[BBox]) -> Option<BBox> {
    gt.iter()
        .filter(|b| b.class_id == HUMAN)
        .copied()
        .max_by(|a, b| (a.bw * a.bh).total_cmp(&(b.bw * b.bh)))
}

/// Patch side for a target person, clamped to the image.
pub(crate) fn patch_side(fraction: f64, person: &BBox, image: &Image) -> usize {
    let short = image.width().min(image.height());
    let side = (fraction * person.max_side_px(image.width(), image.height())).round() as usize;
    side.clamp(1, short)
}

pub(crate) fn centered_on(person: &BBox, side: usize, image: &Image) -> (usize, usize) {
    let cx = person.cx * image.width() as f64;
    let cy = person.cy * image.height() as f64;
    let x0 = (cx - side as f64 / 2.0).round().max(0.0) as usize;
    let y0 = (cy - side as f64 / 2.0).round().max(0.0) as usize;
    (x0.min(image.width() - side), y0.min(image.height() - side))
}

/// `n x n` evenly spaced top-left positions keeping a `w x h` rectangle
/// inside the person box (or centered on it when the box is smaller),
/// clamped to the image and de-duplicated in row-major order.
pub(crate) fn person_grid(
    person: &BBox,
    w: usize,
    h: usize,
    n: usize,
    image: &Image,
) -> Vec<(usize, usize)> {
    let r = person.pixel_rect_f(image.width(), image.height());
    let axis = |lo: f64, hi: f64, len: usize, limit: usize| -> Vec<usize> {
        let span = hi - lo - len as f64;
        (0..n)
            .map(|i| {
                let t = if n == 1 {
                    0.5
                } else {
                    i as f64 / (n - 1) as f64
                };
                let start = if span >= 0.0 {
                    lo + t * span
                } else {
                    (lo + hi - len as f64) / 2.0
                };
                (start.round().max(0.0) as usize).min(limit - len)
            })
            .collect()
    };
    let xs = axis(r.x1, r.x2, w, image.width());
    let ys = axis(r.y1, r.y2, h, image.height());
    let mut out = Vec::with_capacity(n * n);
    for &y in &ys {
        for &x in &xs {
            if !out.contains(&(x, y)) {
                out.push((x, y));
            }
        }
    }
    out
}

/// Highest human confidence among raw candidates overlapping `person` with
/// IoU >= 0.5.
pub(crate) fn person_score(model: &DetectorModel, image: &Image, person: &BBox) -> Result<f64> {
    let dets = decode(&model.forward(image))?;
    let target = person.rect();
    Ok(dets
        .iter()
        .filter(|d| d.class_id() == HUMAN && iou(&d.bbox.rect(), &target) >= 0.5)
        .map(|d| d.confidence)
        .fold(0.0, f64::max))
}

/// Per-image attack scorer with the clean baseline cached.
pub(crate) struct ImageObjective<'a> {
    model: &'a DetectorModel,
    gt: &'a [BBox],
    person: BBox,
    objective: AttackObjective,
    weights: ClassWeights,
    clean_score: f64,
}

impl<'a> ImageObjective<'a> {
    pub fn new(
        model: &'a DetectorModel,
        image: &Image,
        gt: &'a [BBox],
        person: BBox,
        config: &AttackConfig,
    ) -> Result<Self> {
        let mut this = ImageObjective {
            model,
            gt,
            person,
            objective: config.objective,
            weights: config.class_weights,
            clean_score: 0.0,
        };
        if this.objective == AttackObjective::ConfidenceDrop {
            this.clean_score = person_score(model, image, &person)?;
        }
        Ok(this)
    }

    pub fn score(&self, patched: &Image) -> Result<f64> {
        match self.objective {
            AttackObjective::ConfidenceDrop => {
                Ok(self.clean_score - person_score(self.model, patched, &self.person)?)
            }
            AttackObjective::DetectionLoss => {
                Ok(self.model.loss(patched, self.gt, self.weights)?.total())
            }
        }
    }
}

pub(crate) fn require_person(gt: &[BBox]) -> Result<BBox> {
    target_person(gt).ok_or_else(|| PodError::contract("attack target image has no human box"))
}

pub(crate) fn rect_mask_area(rects: &[(PixelRect, f64)]) -> usize {
    let mut cells: Vec<(usize, usize)> = Vec::new();
    for (r, _) in rects {
        for y in r.y..r.y + r.h {
            for x in r.x..r.x + r.w {
                cells.push((x, y));
            }
        }
    }
    cells.sort_unstable();
    cells.dedup();
    cells.len()
}
