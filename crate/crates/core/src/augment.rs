//! Random patch occlusion augmentation.
//!
//! Each sample receives `N` square patches of random side, type and
//! position. Patches are applied in order, so later ones may cover earlier
//! ones. Inverted patches read their source pixels from the input image,
//! not from the partially patched one. When patch labels are enabled every
//! applied patch contributes one class-1 box covering its rectangle.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{BBox, Image, PixelRect, PATCH};
use crate::seed::PodRng;
use crate::{PodError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchType {
    Erase,
    Invert,
    Noise,
    /// Payload supplied from outside, e.g. an optimized adversarial patch.
    External,
}

/// Square `side x side` block of values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPixels {
    side: usize,
    values: Vec<f64>,
    patch_type: PatchType,
}

impl PatchPixels {
    pub fn new(patch_type: PatchType, side: usize, values: Vec<f64>) -> Result<Self> {
        if side == 0 {
            return Err(PodError::contract("patch side must be at least 1"));
        }
        if values.len() != side * side {
            return Err(PodError::contract(format!(
                "patch of side {side} needs {} values, got {}",
                side * side,
                values.len()
            )));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(PodError::contract("patch values must lie in [0,1]"));
        }
        if patch_type == PatchType::Erase && values.iter().any(|&v| v != 0.0) {
            return Err(PodError::contract("erase patch must be all zeros"));
        }
        Ok(PatchPixels {
            side,
            values,
            patch_type,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn patch_type(&self) -> PatchType {
        self.patch_type
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.side + x]
    }

    /// Nearest-neighbour rescale to `side x side`.
    pub fn resized(&self, side: usize) -> PatchPixels {
        assert!(side >= 1);
        if side == self.side {
            return self.clone();
        }
        let mut values = Vec::with_capacity(side * side);
        for y in 0..side {
            let sy = y * self.side / side;
            for x in 0..side {
                values.push(self.get(x * self.side / side, sy));
            }
        }
        PatchPixels {
            side,
            values,
            patch_type: self.patch_type,
        }
    }

    pub fn to_image(&self) -> Image {
        Image::new(self.side, self.side, self.values.clone()).expect("patch values validated")
    }

    pub fn from_image(patch_type: PatchType, image: &Image) -> Result<Self> {
        if image.width() != image.height() {
            return Err(PodError::contract("patch image must be square"));
        }
        PatchPixels::new(patch_type, image.width(), image.pixels().to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TypeWeights {
    pub erase: f64,
    pub invert: f64,
    pub noise: f64,
}

impl Default for TypeWeights {
    fn default() -> Self {
        TypeWeights {
            erase: 1.0,
            invert: 1.0,
            noise: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Inclusive range for the number of patches.
    pub count_range: (usize, usize),
    /// Patch side as a fraction of `min(h, w)`.
    pub size_fraction_range: (f64, f64),
    pub type_weights: TypeWeights,
    /// Append one class-1 box per patch (POD); off gives POD without patch detection.
    pub emit_patch_labels: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            count_range: (1, 3),
            size_fraction_range: (0.1, 0.4),
            type_weights: TypeWeights::default(),
            emit_patch_labels: true,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.size_fraction_range;
        if self.count_range.0 > self.count_range.1 {
            return Err(PodError::config("augment.count_range", "min exceeds max"));
        }
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(PodError::config(
                "augment.size_fraction_range",
                "need 0 < min <= max <= 1",
            ));
        }
        let w = self.type_weights;
        if [w.erase, w.invert, w.noise].iter().any(|v| !(*v >= 0.0))
            || w.erase + w.invert + w.noise <= 0.0
        {
            return Err(PodError::config(
                "augment.type_weights",
                "weights must be nonnegative with a positive sum",
            ));
        }
        Ok(())
    }

    fn sample_type(&self, rng: &mut PodRng) -> PatchType {
        let w = self.type_weights;
        let u = rng.gen::<f64>() * (w.erase + w.invert + w.noise);
        if u < w.erase {
            PatchType::Erase
        } else if u < w.erase + w.invert {
            PatchType::Invert
        } else {
            PatchType::Noise
        }
    }

    fn sample_side(&self, width: usize, height: usize, rng: &mut PodRng) -> usize {
        let short = width.min(height);
        let (lo, hi) = self.size_fraction_range;
        let frac = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        ((frac * short as f64).round() as usize).clamp(1, short)
    }
}

pub fn make_patch(
    patch_type: PatchType,
    side: usize,
    source_region: Option<&[f64]>,
    rng: &mut PodRng,
) -> Result<PatchPixels> {
    if side == 0 {
        return Err(PodError::contract("patch side must be at least 1"));
    }
    let values = match patch_type {
        PatchType::Erase => vec![0.0; side * side],
        PatchType::Invert => {
            let src = source_region
                .ok_or_else(|| PodError::contract("invert patch requires a source region"))?;
            if src.len() != side * side {
                return Err(PodError::contract(format!(
                    "invert source has {} values, expected {}",
                    src.len(),
                    side * side
                )));
            }
            src.iter().map(|v| 1.0 - v).collect()
        }
        PatchType::Noise => (0..side * side).map(|_| rng.gen::<f64>()).collect(),
        PatchType::External => {
            return Err(PodError::contract(
                "external patches carry their own payload",
            ))
        }
    };
    PatchPixels::new(patch_type, side, values)
}

/// Returns a copy of `image` with `patch` written at `(x0, y0)`.
pub fn apply_patch(image: &Image, patch: &PatchPixels, x0: usize, y0: usize) -> Result<Image> {
    let mut out = image.clone();
    apply_patch_in_place(&mut out, patch, x0, y0)?;
    Ok(out)
}

pub(crate) fn apply_patch_in_place(
    image: &mut Image,
    patch: &PatchPixels,
    x0: usize,
    y0: usize,
) -> Result<()> {
    let l = patch.side();
    if x0 + l > image.width() || y0 + l > image.height() {
        return Err(PodError::contract(format!(
            "patch of side {l} at ({x0},{y0}) exceeds {}x{} image",
            image.width(),
            image.height()
        )));
    }
    for y in 0..l {
        for x in 0..l {
            image.set(x0 + x, y0 + y, patch.get(x, y));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AppliedPatch {
    pub patch_type: PatchType,
    pub rect: PixelRect,
}

#[derive(Debug, Clone)]
pub struct AugmentOutcome {
    pub image: Image,
    pub labels: Vec<BBox>,
    /// Patches in application order.
    pub applied: Vec<AppliedPatch>,
}

fn place(width: usize, height: usize, side: usize, rng: &mut PodRng) -> (usize, usize) {
    (
        rng.gen_range(0..=width - side),
        rng.gen_range(0..=height - side),
    )
}

pub fn pod_augment(
    image: &Image,
    labels: &[BBox],
    config: &AugmentConfig,
    rng: &mut PodRng,
) -> Result<AugmentOutcome> {
    config.validate()?;
    let (w, h) = (image.width(), image.height());
    let n = rng.gen_range(config.count_range.0..=config.count_range.1);
    let mut out = image.clone();
    let mut out_labels = labels.to_vec();
    let mut applied = Vec::with_capacity(n);
    for _ in 0..n {
        let side = config.sample_side(w, h, rng);
        let patch_type = config.sample_type(rng);
        let (x0, y0) = place(w, h, side, rng);
        let source = (patch_type == PatchType::Invert).then(|| image.crop(x0, y0, side, side));
        let patch = make_patch(patch_type, side, source.as_deref(), rng)?;
        apply_patch_in_place(&mut out, &patch, x0, y0)?;
        let rect = PixelRect {
            x: x0,
            y: y0,
            w: side,
            h: side,
        };
        if config.emit_patch_labels {
            out_labels.push(BBox::from_pixel_rect(PATCH, rect, w, h));
        }
        applied.push(AppliedPatch { patch_type, rect });
    }
    Ok(AugmentOutcome {
        image: out,
        labels: out_labels,
        applied,
    })
}

/// Attaches one payload drawn uniformly from `payloads`, sized and placed
/// with the same random policy as [`pod_augment`].
pub fn augment_with_payloads(
    image: &Image,
    labels: &[BBox],
    payloads: &[PatchPixels],
    config: &AugmentConfig,
    rng: &mut PodRng,
) -> Result<AugmentOutcome> {
    config.validate()?;
    if payloads.is_empty() {
        return Err(PodError::contract("no payloads to attach"));
    }
    let (w, h) = (image.width(), image.height());
    let payload = &payloads[rng.gen_range(0..payloads.len())];
    let side = config.sample_side(w, h, rng);
    let (x0, y0) = place(w, h, side, rng);
    let patch = payload.resized(side);
    let mut out = image.clone();
    apply_patch_in_place(&mut out, &patch, x0, y0)?;
    let rect = PixelRect {
        x: x0,
        y: y0,
        w: side,
        h: side,
    };
    let mut out_labels = labels.to_vec();
    if config.emit_patch_labels {
        out_labels.push(BBox::from_pixel_rect(PATCH, rect, w, h));
    }
    Ok(AugmentOutcome {
        image: out,
        labels: out_labels,
        applied: vec![AppliedPatch {
            patch_type: PatchType::External,
            rect,
        }],
    })
}
