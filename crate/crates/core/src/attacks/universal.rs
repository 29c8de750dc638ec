//! Universal patch: projected gradient ascent on the mean detection loss
//! over mini-batches, with the patch rescaled onto each target person.

use rand::Rng;
use rayon::prelude::*;

use super::{centered_on, patch_side, person_grid, target_person, AttackConfig, LocationPolicy};
use crate::augment::{apply_patch, PatchPixels, PatchType};
use crate::data::{BBox, Dataset, Image};
use crate::detector::{resize_dataset, DetectorModel};
use crate::seed::PodRng;
use crate::{stream, PodError, Result};

/// Images that contain a person, with their target box.
fn eligible(dataset: &Dataset) -> Vec<(usize, BBox)> {
    dataset
        .samples
        .iter()
        .enumerate()
        .filter_map(|(i, s)| target_person(&s.labels).map(|p| (i, p)))
        .collect()
}

/// Position for a patch of `side` pixels according to `policy`. Grid search
/// picks a random grid point here; scenario application refines it.
pub(crate) fn sample_position(
    policy: LocationPolicy,
    person: &BBox,
    side: usize,
    image: &Image,
    grid: usize,
    rng: &mut PodRng,
) -> (usize, usize) {
    match policy {
        LocationPolicy::FixedOnPerson => centered_on(person, side, image),
        LocationPolicy::Random => (
            rng.gen_range(0..=image.width() - side),
            rng.gen_range(0..=image.height() - side),
        ),
        LocationPolicy::GridSearch => {
            let pts = person_grid(person, side, side, grid, image);
            pts[rng.gen_range(0..pts.len())]
        }
    }
}

/// Mean detection loss over the person images of `dataset` with `patch`
/// attached per the configured placement policy.
pub fn universal_objective(
    model: &DetectorModel,
    dataset: &Dataset,
    patch: &PatchPixels,
    config: &AttackConfig,
) -> Result<f64> {
    let data = resize_dataset(dataset, model.input_size());
    let items = eligible(&data);
    if items.is_empty() {
        return Err(PodError::contract("no images with a person to attack"));
    }
    let losses: Vec<Result<f64>> = items
        .par_iter()
        .map(|&(idx, person)| {
            let s = &data.samples[idx];
            let side = patch_side(config.patch_fraction, &person, &s.image);
            let mut rng = stream!(config.seed, "objective-place", idx);
            let (x0, y0) = sample_position(
                config.location_policy,
                &person,
                side,
                &s.image,
                config.location_grid,
                &mut rng,
            );
            let patched = apply_patch(&s.image, &patch.resized(side), x0, y0)?;
            Ok(model
                .loss(&patched, &s.labels, config.class_weights)?
                .total())
        })
        .collect();
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / items.len() as f64)
}

pub fn optimize_universal_patch(
    model: &DetectorModel,
    dataset: &Dataset,
    config: &AttackConfig,
) -> Result<PatchPixels> {
    ascend(model, dataset, config)
}

/// As [`optimize_universal_patch`], also returning the final objective over
/// (at most 64 of) the dataset's person images.
pub fn optimize_universal_patch_scored(
    model: &DetectorModel,
    dataset: &Dataset,
    config: &AttackConfig,
) -> Result<(PatchPixels, f64)> {
    let patch = ascend(model, dataset, config)?;
    let mut subset = dataset.clone();
    let keep: Vec<usize> = eligible(dataset)
        .into_iter()
        .map(|(i, _)| i)
        .take(64)
        .collect();
    subset.samples = keep.iter().map(|&i| dataset.samples[i].clone()).collect();
    let objective = universal_objective(model, &subset, &patch, config)?;
    Ok((patch, objective))
}

fn ascend(model: &DetectorModel, dataset: &Dataset, config: &AttackConfig) -> Result<PatchPixels> {
    config.validate()?;
    let base = config.base_side;
    let mut init_rng = stream!(config.seed, "universal-init");
    let mut values: Vec<f64> = (0..base * base).map(|_| init_rng.gen::<f64>()).collect();
    if config.steps == 0 {
        return PatchPixels::new(PatchType::External, base, values);
    }

    let data = resize_dataset(dataset, model.input_size());
    let items = eligible(&data);
    if items.is_empty() {
        return Err(PodError::contract("no images with a person to attack"));
    }

    for step in 0..config.steps {
        let mut batch_rng = stream!(config.seed, "universal-batch", step);
        let batch: Vec<(usize, BBox, u64)> = (0..config.batch_size)
            .map(|_| {
                let (idx, p) = items[batch_rng.gen_range(0..items.len())];
                (idx, p, batch_rng.gen::<u64>())
            })
            .collect();
        let patch = PatchPixels::new(PatchType::External, base, values.clone())?;

        let grads: Vec<Result<Vec<f64>>> = batch
            .par_iter()
            .map(|&(idx, person, place_seed)| {
                let s = &data.samples[idx];
                let side = patch_side(config.patch_fraction, &person, &s.image);
                let mut rng = stream!(place_seed, "place");
                let (x0, y0) = sample_position(
                    config.location_policy,
                    &person,
                    side,
                    &s.image,
                    config.location_grid,
                    &mut rng,
                );
                let patched = apply_patch(&s.image, &patch.resized(side), x0, y0)?;
                let (_, img_grad) =
                    model.loss_input_gradient(&patched, &s.labels, config.class_weights)?;
                // Pull the pixel gradient back through the nearest-neighbour rescale.
                let w = s.image.width();
                let mut g = vec![0.0; base * base];
                for v in 0..side {
                    let sy = v * base / side;
                    for u in 0..side {
                        let sx = u * base / side;
                        g[sy * base + sx] += img_grad[(y0 + v) * w + x0 + u];
                    }
                }
                Ok(g)
            })
            .collect();

        let mut total = vec![0.0; base * base];
        for g in grads {
            for (t, v) in total.iter_mut().zip(g?) {
                *t += v;
            }
        }
        let scale = 1.0 / batch.len() as f64;
        if total.iter().any(|g| !g.is_finite()) {
            return Err(PodError::AttackDiverged { iteration: step });
        }
        for (p, g) in values.iter_mut().zip(&total) {
            *p = (*p + config.step_size * g * scale).clamp(0.0, 1.0);
        }
    }
    PatchPixels::new(PatchType::External, base, values)
}
