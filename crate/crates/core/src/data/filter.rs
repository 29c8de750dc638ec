use super::{Dataset, HUMAN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FilterStats {
    pub images: usize,
    pub labels: usize,
}

/// Keeps human boxes whose larger pixel side exceeds `min_size_px` and drops
/// images left without boxes. Zero-area boxes never survive.
pub fn filter_persons(dataset: &Dataset, min_size_px: f64) -> (Dataset, FilterStats) {
    let mut out = Dataset::new(dataset.split_name.clone());
    for sample in &dataset.samples {
        let (w, h) = (sample.image.width(), sample.image.height());
        let labels: Vec<_> = sample
            .labels
            .iter()
            .filter(|b| {
                b.class_id == HUMAN && b.bw > 0.0 && b.bh > 0.0 && b.max_side_px(w, h) > min_size_px
            })
            .copied()
            .collect();
        if labels.is_empty() {
            continue;
        }
        let mut kept = sample.clone();
        kept.labels = labels;
        out.samples.push(kept);
    }
    let stats = FilterStats {
        images: out.len(),
        labels: out.label_count(HUMAN),
    };
    (out, stats)
}
