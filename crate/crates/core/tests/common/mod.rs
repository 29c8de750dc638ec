#![allow(dead_code)]

use pod_core::augment::{AugmentConfig, AugmentOutcome, PatchType};
use pod_core::data::{BBox, Image, PATCH};

/// Checks one augmentation result against a pixel-level replay: every pixel
/// takes the value dictated by the last patch covering it, or keeps its
/// original value.
pub fn check_augment(
    input: &Image,
    labels: &[BBox],
    config: &AugmentConfig,
    out: &AugmentOutcome,
) -> Result<(), String> {
    let (w, h) = (input.width(), input.height());
    if out.image.width() != w || out.image.height() != h {
        return Err("image size changed".into());
    }
    let (lo, hi) = config.count_range;
    if out.applied.len() < lo || out.applied.len() > hi {
        return Err(format!("{} patches outside {lo}..={hi}", out.applied.len()));
    }
    if out.image.pixels().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err("pixel outside [0,1]".into());
    }
    for p in &out.applied {
        let r = p.rect;
        if r.w == 0 || r.w != r.h || r.x + r.w > w || r.y + r.h > h {
            return Err(format!("patch rect {r:?} out of bounds"));
        }
    }
    for y in 0..h {
        for x in 0..w {
            let v = out.image.get(x, y);
            let last = out.applied.iter().rev().find(|p| p.rect.contains(x, y));
            let ok = match last.map(|p| p.patch_type) {
                None => v == input.get(x, y),
                Some(PatchType::Erase) => v == 0.0,
                Some(PatchType::Invert) => v == 1.0 - input.get(x, y),
                Some(PatchType::Noise) => (0.0..=1.0).contains(&v),
                Some(PatchType::External) => false,
            };
            if !ok {
                return Err(format!("pixel ({x},{y}) = {v} violates {last:?}"));
            }
        }
    }
    if out.labels.len() < labels.len() || out.labels[..labels.len()] != *labels {
        return Err("input labels were modified".into());
    }
    let extra = &out.labels[labels.len()..];
    if config.emit_patch_labels {
        if extra.len() != out.applied.len() {
            return Err("one class-1 box per patch expected".into());
        }
        for (b, p) in extra.iter().zip(&out.applied) {
            if b.class_id != PATCH || b.pixel_rect(w, h) != p.rect {
                return Err(format!("patch box {b:?} differs from {:?}", p.rect));
            }
        }
    } else if !extra.is_empty() {
        return Err("patch boxes emitted with labels disabled".into());
    }
    Ok(())
}

/// IoU by counting unit cells of integer-cornered boxes `(x1, y1, x2, y2)`.
pub fn raster_iou(a: (i64, i64, i64, i64), b: (i64, i64, i64, i64)) -> f64 {
    let lo_x = a.0.min(b.0);
    let hi_x = a.2.max(b.2);
    let lo_y = a.1.min(b.1);
    let hi_y = a.3.max(b.3);
    let inside =
        |r: (i64, i64, i64, i64), x: i64, y: i64| x >= r.0 && x < r.2 && y >= r.1 && y < r.3;
    let (mut inter, mut union) = (0u64, 0u64);
    for y in lo_y..hi_y {
        for x in lo_x..hi_x {
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            inter += (ia && ib) as u64;
            union += (ia || ib) as u64;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// One detection or ground-truth box for the AP oracle: image index, class,
/// corners and (for detections) confidence.
#[derive(Debug, Clone, Copy)]
pub struct OracleBox {
    pub image: usize,
    pub class_id: u8,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub conf: f64,
}

fn corner_iou(a: &OracleBox, b: &OracleBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// True-positive count among the `k` most confident detections, matching
/// from scratch for every prefix.
fn prefix_tp(dets: &[OracleBox], gts: &[OracleBox], k: usize, thr: f64) -> usize {
    let mut used = vec![false; gts.len()];
    let mut tp = 0;
    for d in &dets[..k] {
        let mut best: Option<usize> = None;
        let mut best_iou = f64::NEG_INFINITY;
        for (g, gt) in gts.iter().enumerate() {
            if used[g] || gt.image != d.image {
                continue;
            }
            let v = corner_iou(d, gt);
            if v >= thr && v > best_iou {
                best = Some(g);
                best_iou = v;
            }
        }
        if let Some(g) = best {
            used[g] = true;
            tp += 1;
        }
    }
    tp
}

/// Brute-force AP: enumerate every confidence cut-off, take precision and
/// recall at each, and sum the interpolated precision over the cut-offs
/// that add a true positive.
pub fn brute_force_ap(dets: &[OracleBox], gts: &[OracleBox], class_id: u8, thr: f64) -> f64 {
    let gts: Vec<OracleBox> = gts
        .iter()
        .filter(|g| g.class_id == class_id)
        .copied()
        .collect();
    let mut dets: Vec<OracleBox> = dets
        .iter()
        .filter(|d| d.class_id == class_id)
        .copied()
        .collect();
    dets.sort_by(|a, b| b.conf.partial_cmp(&a.conf).unwrap());
    if gts.is_empty() {
        return if dets.is_empty() { 1.0 } else { 0.0 };
    }
    let n = dets.len();
    let tps: Vec<usize> = (0..=n).map(|k| prefix_tp(&dets, &gts, k, thr)).collect();
    let precision: Vec<f64> = (1..=n).map(|k| tps[k] as f64 / k as f64).collect();
    let mut ap = 0.0;
    for k in 1..=n {
        if tps[k] > tps[k - 1] {
            let interp = precision[k - 1..].iter().cloned().fold(0.0, f64::max);
            ap += interp / gts.len() as f64;
        }
    }
    ap
}

pub struct ApInstance {
    pub dets: Vec<(pod_core::detector::Detection, usize)>,
    pub gts: Vec<(BBox, usize)>,
    pub oracle_dets: Vec<OracleBox>,
    pub oracle_gts: Vec<OracleBox>,
}

fn to_oracle(b: &BBox, image: usize, conf: f64) -> OracleBox {
    let r = b.rect();
    OracleBox {
        image,
        class_id: b.class_id,
        x1: r.x1,
        y1: r.y1,
        x2: r.x2,
        y2: r.y2,
        conf,
    }
}

/// Up to 10 ground truths over 1-3 images and up to 15 detections, most of
/// them jittered copies of a ground truth so IoUs straddle 0.5.
pub fn random_ap_instance(rng: &mut pod_core::seed::PodRng) -> ApInstance {
    use pod_core::data::HUMAN;
    use rand::Rng;
    let images = rng.gen_range(1..=3);
    let n_gt = rng.gen_range(0..=10);
    let n_det = rng.gen_range(0..=15);
    let random_box = |rng: &mut pod_core::seed::PodRng| {
        let bw = rng.gen_range(0.05..0.3);
        let bh = rng.gen_range(0.05..0.3);
        BBox::new(
            if rng.gen_bool(0.85) { HUMAN } else { PATCH },
            rng.gen_range(bw / 2.0..1.0 - bw / 2.0),
            rng.gen_range(bh / 2.0..1.0 - bh / 2.0),
            bw,
            bh,
        )
    };
    let gts: Vec<(BBox, usize)> = (0..n_gt)
        .map(|_| (random_box(rng), rng.gen_range(0..images)))
        .collect();
    let mut dets = Vec::new();
    for _ in 0..n_det {
        let conf = rng.gen::<f64>();
        let (bbox, image) = if !gts.is_empty() && rng.gen_bool(0.7) {
            let (g, img) = gts[rng.gen_range(0..gts.len())];
            let j = rng.gen_range(0.0..0.4);
            let b = BBox::new(
                g.class_id,
                g.cx + rng.gen_range(-j..=j) * g.bw,
                g.cy + rng.gen_range(-j..=j) * g.bh,
                g.bw * rng.gen_range(1.0 - j..=1.0 + j),
                g.bh * rng.gen_range(1.0 - j..=1.0 + j),
            );
            (b, img)
        } else {
            (random_box(rng), rng.gen_range(0..images))
        };
        dets.push((
            pod_core::detector::Detection {
                bbox,
                confidence: conf,
            },
            image,
        ));
    }
    ApInstance {
        oracle_dets: dets
            .iter()
            .map(|(d, i)| to_oracle(&d.bbox, *i, d.confidence))
            .collect(),
        oracle_gts: gts.iter().map(|(g, i)| to_oracle(g, *i, 0.0)).collect(),
        dets,
        gts,
    }
}

pub fn pod(args: &[&str]) -> std::process::Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_pod"))
        .args(args)
        .env_remove("POD_SEED")
        .output()
        .expect("pod binary runs")
}

/// A run small enough for a test: a few tiny synthetic images, one epoch,
/// one repeat and a cheap universal attack.
pub fn small_run(out: &std::path::Path, modes: &[&str]) -> serde_json::Value {
    serde_json::json!({
        "seed": 7,
        "out": out,
        "dataset": { "synth": {
            "train_count": 24, "test_count": 8,
            "train": { "image_size": 64 }, "test": { "image_size": 64, "persons_per_image": [1, 1] }
        }},
        "train": {
            "modes": modes, "epochs": 3, "batch_size": 8,
            "adv": { "start_epoch": 1, "period": 1, "attack": { "kind": "universal", "steps": 2 } }
        },
        "attacks": [
            { "name": "noise", "attack": { "kind": "noise" } },
            { "name": "universal", "attack": { "kind": "universal", "steps": 3 } }
        ],
        "eval": { "repeats": 1 }
    })
}

pub fn write_config(dir: &std::path::Path, value: &serde_json::Value) -> std::path::PathBuf {
    let path = dir.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

/// prepare, train every mode, evaluate. Panics on any failing step.
pub fn full_run(config: &std::path::Path, modes: &[&str]) {
    let c = config.to_str().unwrap();
    let ok = |o: std::process::Output| {
        assert!(
            o.status.success(),
            "{}\n{}",
            String::from_utf8_lossy(&o.stdout),
            String::from_utf8_lossy(&o.stderr)
        );
    };
    ok(pod(&["--config", c, "prepare"]));
    for m in modes {
        ok(pod(&["--config", c, "train", "--mode", m]));
    }
    ok(pod(&["--config", c, "evaluate"]));
}

/// Central finite differences (step `h`) against the analytic parameter
/// gradient of the selected loss terms, on up to `want` randomly drawn
/// parameters whose gradient is not negligible. Returns how many were
/// checked and the largest relative error.
pub fn param_gradient_check(
    model: &pod_core::detector::DetectorModel,
    image: &Image,
    targets: &[BBox],
    terms: pod_core::detector::LossTerms,
    want: usize,
    h: f64,
    seed: u64,
) -> (usize, f64) {
    use rand::Rng;
    let w = pod_core::detector::ClassWeights::default();
    let (_, grad) = model.loss_param_gradient(image, targets, w, terms).unwrap();
    let mut rng = pod_core::stream!(seed, "fd");
    let (mut checked, mut worst, mut tries) = (0, 0.0f64, 0);
    while checked < want && tries < 100 * want {
        tries += 1;
        let i = rng.gen_range(0..model.params.len());
        let mut p = model.clone();
        p.params[i] += h;
        let mut m = model.clone();
        m.params[i] -= h;
        let fd = (p.loss(image, targets, w).unwrap().selected(terms)
            - m.loss(image, targets, w).unwrap().selected(terms))
            / (2.0 * h);
        if grad[i].abs() < 1e-5 && fd.abs() < 1e-5 {
            continue;
        }
        worst = worst.max((grad[i] - fd).abs() / grad[i].abs().max(fd.abs()));
        checked += 1;
    }
    (checked, worst)
}
