//! Composite detection loss.
//!
//! Per image, summed over every anchor slot of every cell:
//! * objectness: binary cross-entropy on every slot (target 1 on slots that
//!   own a box);
//! * box: `BOX_WEIGHT * (sigmoid(t) - target)^2` on the four regressors of
//!   owned slots;
//! * class: cross-entropy on owned slots, scaled by the weight of the target
//!   class (human 0.9, patch 0.1 by default).
//!
//! A box goes to the cell holding its center and the anchor slot with the
//! closest aspect ratio. The first box to reach a slot owns it; later boxes
//! for the same slot are ignored.

use serde::{Deserialize, Serialize};

use super::net::{
    head_channel, sigmoid, RawOutput, ANCHORS, ANCHOR_ASPECTS, BOX_H, BOX_W, BOX_X, BOX_Y, CLS0,
    CLS1, OBJ,
};
use crate::data::{BBox, HUMAN, PATCH};
use crate::{PodError, Result};

pub const BOX_WEIGHT: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassWeights {
    pub human: f64,
    pub patch: f64,
}

impl Default for ClassWeights {
    fn default() -> Self {
        ClassWeights {
            human: 0.9,
            patch: 0.1,
        }
    }
}

impl ClassWeights {
    pub fn for_class(&self, class_id: u8) -> f64 {
        if class_id == HUMAN {
            self.human
        } else {
            self.patch
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        ClassWeights {
            human: self.human * k,
            patch: self.patch * k,
        }
    }
}

/// Which loss terms contribute to a value/gradient evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossTerms {
    pub objectness: bool,
    pub box_regression: bool,
    pub class: bool,
}

impl LossTerms {
    pub const ALL: LossTerms = LossTerms {
        objectness: true,
        box_regression: true,
        class: true,
    };
    pub const OBJECTNESS: LossTerms = LossTerms {
        objectness: true,
        box_regression: false,
        class: false,
    };
    pub const BOX: LossTerms = LossTerms {
        objectness: false,
        box_regression: true,
        class: false,
    };
    pub const CLASS: LossTerms = LossTerms {
        objectness: false,
        box_regression: false,
        class: true,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub objectness: f64,
    pub box_regression: f64,
    pub class: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.objectness + self.box_regression + self.class
    }

    pub fn selected(&self, terms: LossTerms) -> f64 {
        let mut v = 0.0;
        if terms.objectness {
            v += self.objectness;
        }
        if terms.box_regression {
            v += self.box_regression;
        }
        if terms.class {
            v += self.class;
        }
        v
    }

    pub fn is_finite(&self) -> bool {
        self.total().is_finite()
    }
}

impl std::ops::AddAssign for LossBreakdown {
    fn add_assign(&mut self, o: Self) {
        self.objectness += o.objectness;
        self.box_regression += o.box_regression;
        self.class += o.class;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellTarget {
    pub class_id: u8,
    /// Center offset inside the cell, in `[0, 1]`.
    pub tx: f64,
    pub ty: f64,
    pub bw: f64,
    pub bh: f64,
}

/// Anchor slot whose aspect ratio is closest to the box's in log scale.
pub fn best_anchor(b: &BBox) -> usize {
    let aspect = (b.bw / b.bh).ln();
    let mut best = 0;
    for a in 1..ANCHORS {
        if (aspect - ANCHOR_ASPECTS[a].ln()).abs() < (aspect - ANCHOR_ASPECTS[best].ln()).abs() {
            best = a;
        }
    }
    best
}

/// Slot ownership, indexed `(anchor * grid + row) * grid + col`.
pub fn assign_targets(targets: &[BBox], grid: usize) -> Result<Vec<Option<CellTarget>>> {
    let mut cells = vec![None; ANCHORS * grid * grid];
    let g = grid as f64;
    for t in targets {
        if t.class_id != HUMAN && t.class_id != PATCH {
            return Err(PodError::contract(format!(
                "target class {} outside {{0, 1}}",
                t.class_id
            )));
        }
        let col = ((t.cx * g).floor().max(0.0) as usize).min(grid - 1);
        let row = ((t.cy * g).floor().max(0.0) as usize).min(grid - 1);
        let slot = &mut cells[(best_anchor(t) * grid + row) * grid + col];
        if slot.is_none() {
            *slot = Some(CellTarget {
                class_id: t.class_id,
                tx: (t.cx * g - col as f64).clamp(0.0, 1.0),
                ty: (t.cy * g - row as f64).clamp(0.0, 1.0),
                bw: t.bw.clamp(0.0, 1.0),
                bh: t.bh.clamp(0.0, 1.0),
            });
        }
    }
    Ok(cells)
}

/// `log(1 + exp(x))` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn detection_loss(
    raw: &RawOutput,
    targets: &[BBox],
    weights: ClassWeights,
) -> Result<LossBreakdown> {
    Ok(evaluate(raw, targets, weights, LossTerms::ALL, false)?.0)
}

/// Loss plus its gradient w.r.t. the raw head output, restricted to `terms`.
pub fn detection_loss_grad(
    raw: &RawOutput,
    targets: &[BBox],
    weights: ClassWeights,
    terms: LossTerms,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let (loss, grad) = evaluate(raw, targets, weights, terms, true)?;
    Ok((loss, grad.expect("gradient requested")))
}

fn evaluate(
    raw: &RawOutput,
    targets: &[BBox],
    weights: ClassWeights,
    terms: LossTerms,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Vec<f64>>)> {
    let g = raw.grid;
    let cells = assign_targets(targets, g)?;
    let mut loss = LossBreakdown::default();
    let mut grad = want_grad.then(|| vec![0.0; raw.data.len()]);

    for a in 0..ANCHORS {
        let ch = |field| head_channel(a, field);
        for row in 0..g {
            for col in 0..g {
                let target = cells[(a * g + row) * g + col];
                let t_obj = raw.at(ch(OBJ), row, col);
                let y = if target.is_some() { 1.0 } else { 0.0 };
                // BCE with logits: softplus(t) - y t
                loss.objectness += softplus(t_obj) - y * t_obj;
                if let (Some(gr), true) = (grad.as_mut(), terms.objectness) {
                    gr[raw.index(ch(OBJ), row, col)] = sigmoid(t_obj) - y;
                }

                let Some(t) = target else { continue };

                for (field, goal) in [(BOX_X, t.tx), (BOX_Y, t.ty), (BOX_W, t.bw), (BOX_H, t.bh)] {
                    let p = sigmoid(raw.at(ch(field), row, col));
                    let diff = p - goal;
                    loss.box_regression += BOX_WEIGHT * diff * diff;
                    if let (Some(gr), true) = (grad.as_mut(), terms.box_regression) {
                        gr[raw.index(ch(field), row, col)] =
                            2.0 * BOX_WEIGHT * diff * p * (1.0 - p);
                    }
                }

                let (c0, c1) = (raw.at(ch(CLS0), row, col), raw.at(ch(CLS1), row, col));
                let m = c0.max(c1);
                let lse = m + ((c0 - m).exp() + (c1 - m).exp()).ln();
                let w = weights.for_class(t.class_id);
                let (c_target, target_field) = if t.class_id == HUMAN {
                    (c0, CLS0)
                } else {
                    (c1, CLS1)
                };
                loss.class += w * (lse - c_target);
                if let (Some(gr), true) = (grad.as_mut(), terms.class) {
                    for field in [CLS0, CLS1] {
                        let p = (raw.at(ch(field), row, col) - lse).exp();
                        let ind = if field == target_field { 1.0 } else { 0.0 };
                        gr[raw.index(ch(field), row, col)] = w * (p - ind);
                    }
                }
            }
        }
    }
    Ok((loss, grad))
}
