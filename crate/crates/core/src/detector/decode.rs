use serde::{Deserialize, Serialize};

use super::net::{
    head_channel, sigmoid, DetectorModel, RawOutput, ANCHORS, BOX_H, BOX_W, BOX_X, BOX_Y, CLS0,
    CLS1, OBJ,
};
use crate::data::{BBox, Image, HUMAN, PATCH};
use crate::eval::iou;
use crate::{PodError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Geometry and predicted class.
    pub bbox: BBox,
    pub confidence: f64,
}

impl Detection {
    pub fn class_id(&self) -> u8 {
        self.bbox.class_id
    }
}

/// Every anchor slot of every cell yields one candidate per class with confidence
/// `sigmoid(obj) * softmax(class)`. Geometry is clipped to the unit square.
pub fn decode(raw: &RawOutput) -> Result<Vec<Detection>> {
    if !raw.is_finite() {
        return Err(PodError::NonFinite(
            "detector head produced NaN or infinity".into(),
        ));
    }
    let g = raw.grid;
    let gf = g as f64;
    let mut out = Vec::with_capacity(2 * ANCHORS * g * g);
    for a in 0..ANCHORS {
        let at = |field, row, col| raw.at(head_channel(a, field), row, col);
        for row in 0..g {
            for col in 0..g {
                let obj = sigmoid(at(OBJ, row, col));
                let (c0, c1) = (at(CLS0, row, col), at(CLS1, row, col));
                let m = c0.max(c1);
                let (e0, e1) = ((c0 - m).exp(), (c1 - m).exp());
                let cx = (col as f64 + sigmoid(at(BOX_X, row, col))) / gf;
                let cy = (row as f64 + sigmoid(at(BOX_Y, row, col))) / gf;
                let bw = sigmoid(at(BOX_W, row, col));
                let bh = sigmoid(at(BOX_H, row, col));
                for (class_id, p) in [(HUMAN, e0 / (e0 + e1)), (PATCH, e1 / (e0 + e1))] {
                    out.push(Detection {
                        bbox: BBox::new(class_id, cx, cy, bw, bh).clamped(),
                        confidence: (obj * p).clamp(0.0, 1.0),
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Greedy per-class suppression: a box is dropped when its IoU with an
/// already kept box of the same class exceeds `iou_threshold`.
pub fn nms(mut detections: Vec<Detection>, iou_threshold: f64) -> Vec<Detection> {
    detections.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut kept: Vec<Detection> = Vec::new();
    for d in detections {
        let suppressed = kept.iter().any(|k| {
            k.class_id() == d.class_id() && iou(&k.bbox.rect(), &d.bbox.rect()) > iou_threshold
        });
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}

pub fn predict(
    model: &DetectorModel,
    image: &Image,
    conf_threshold: f64,
    nms_iou: f64,
) -> Result<Vec<Detection>> {
    let raw = model.forward(image);
    let candidates: Vec<_> = decode(&raw)?
        .into_iter()
        .filter(|d| d.confidence >= conf_threshold)
        .collect();
    Ok(nms(candidates, nms_iou))
}
