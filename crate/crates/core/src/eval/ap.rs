use crate::data::BBox;
use crate::detector::Detection;

use super::iou;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PRPoint {
    pub precision: f64,
    pub recall: f64,
    pub confidence: f64,
}

/// Precision/recall after each detection of `class_id`, in descending
/// confidence order (stable for ties). Each detection is matched greedily to
/// the unmatched ground truth of the same image with the highest IoU, if that
/// IoU reaches `iou_threshold`.
pub fn pr_curve(
    detections: &[(Detection, usize)],
    gts: &[(BBox, usize)],
    class_id: u8,
    iou_threshold: f64,
) -> Vec<PRPoint> {
    let gts: Vec<&(BBox, usize)> = gts.iter().filter(|(b, _)| b.class_id == class_id).collect();
    let mut dets: Vec<&(Detection, usize)> = detections
        .iter()
        .filter(|(d, _)| d.class_id() == class_id)
        .collect();
    dets.sort_by(|a, b| b.0.confidence.total_cmp(&a.0.confidence));

    let n_gt = gts.len();
    let mut matched = vec![false; n_gt];
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(dets.len());
    for (k, (det, image)) in dets.iter().enumerate() {
        let rect = det.bbox.rect();
        let mut best: Option<(usize, f64)> = None;
        for (gi, (gt, gimage)) in gts.iter().enumerate() {
            if gimage != image || matched[gi] {
                continue;
            }
            let v = iou(&rect, &gt.rect());
            if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((gi, v));
            }
        }
        if let Some((gi, _)) = best {
            matched[gi] = true;
            tp += 1;
        }
        points.push(PRPoint {
            precision: tp as f64 / (k + 1) as f64,
            recall: if n_gt == 0 {
                0.0
            } else {
                tp as f64 / n_gt as f64
            },
            confidence: det.confidence,
        });
    }
    points
}

/// Area under the precision envelope (all-point interpolation).
///
/// With no ground truth the result is 1 when there are also no detections of
/// the class and 0 otherwise.
pub fn average_precision(
    detections: &[(Detection, usize)],
    gts: &[(BBox, usize)],
    class_id: u8,
    iou_threshold: f64,
) -> f64 {
    let n_gt = gts.iter().filter(|(b, _)| b.class_id == class_id).count();
    let points = pr_curve(detections, gts, class_id, iou_threshold);
    if n_gt == 0 {
        return if points.is_empty() { 1.0 } else { 0.0 };
    }
    let mut envelope: Vec<f64> = points.iter().map(|p| p.precision).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, env) in points.iter().zip(&envelope) {
        if p.recall > prev_recall {
            ap += (p.recall - prev_recall) * env;
            prev_recall = p.recall;
        }
    }
    ap.clamp(0.0, 1.0)
}
