use rand::Rng;
use rayon::prelude::*;

use super::universal::sample_position;
use super::{
    hcb_attack, noise_patch, optimize_universal_patch, patch_side, person_grid, shapeloc_attack,
    target_person, AttackConfig, AttackKind, ImageObjective, LocationPolicy,
};
use crate::augment::{apply_patch, PatchPixels};
use crate::data::{Dataset, Image, Sample};
use crate::detector::{resize_dataset, DetectorModel};
use crate::seed::PodRng;
use crate::{stream, Result};

/// Places `patch` per the policy; grid search keeps the strongest position.
fn place_fixed_payload(
    model: &DetectorModel,
    sample: &Sample,
    patch: &PatchPixels,
    config: &AttackConfig,
    rng: &mut PodRng,
) -> Result<Image> {
    let Some(person) = target_person(&sample.labels) else {
        return Ok(sample.image.clone());
    };
    let image = &sample.image;
    let side = patch_side(config.patch_fraction, &person, image);
    let patch = patch.resized(side);
    if config.location_policy != LocationPolicy::GridSearch {
        let (x0, y0) = sample_position(
            config.location_policy,
            &person,
            side,
            image,
            config.location_grid,
            rng,
        );
        return apply_patch(image, &patch, x0, y0);
    }
    let scorer = ImageObjective::new(model, image, &sample.labels, person, config)?;
    let mut best: Option<(f64, Image)> = None;
    for (x0, y0) in person_grid(&person, side, side, config.location_grid, image) {
        let patched = apply_patch(image, &patch, x0, y0)?;
        let s = scorer.score(&patched)?;
        if best.as_ref().is_none_or(|(b, _)| s > *b) {
            best = Some((s, patched));
        }
    }
    Ok(best.map(|(_, img)| img).unwrap_or_else(|| image.clone()))
}

/// Returns a copy of `dataset` (resampled to the model input size) with the
/// attack applied to every image that contains a person. Ground-truth labels
/// are carried over unchanged; the input dataset is not modified.
pub fn apply_attack_scenario(
    model: &DetectorModel,
    dataset: &Dataset,
    attack: &AttackConfig,
    rng: &mut PodRng,
) -> Result<Dataset> {
    attack.validate()?;
    let data = resize_dataset(dataset, model.input_size());
    let run_seed: u64 = rng.gen();

    let universal = match attack.kind {
        AttackKind::Universal => {
            let cfg = AttackConfig {
                seed: run_seed,
                ..attack.clone()
            };
            Some(optimize_universal_patch(model, &data, &cfg)?)
        }
        _ => None,
    };

    let images: Vec<Result<Image>> = data
        .samples
        .par_iter()
        .enumerate()
        .map(|(idx, s)| {
            let mut rng = stream!(run_seed, "scenario", idx);
            match attack.kind {
                AttackKind::Noise => {
                    let Some(person) = target_person(&s.labels) else {
                        return Ok(s.image.clone());
                    };
                    let side = patch_side(attack.patch_fraction, &person, &s.image);
                    let patch = noise_patch(side, &mut rng)?;
                    place_fixed_payload(model, s, &patch, attack, &mut rng)
                }
                AttackKind::Universal => place_fixed_payload(
                    model,
                    s,
                    universal.as_ref().expect("optimized above"),
                    attack,
                    &mut rng,
                ),
                AttackKind::Hcb | AttackKind::Shapeloc => {
                    if target_person(&s.labels).is_none() {
                        return Ok(s.image.clone());
                    }
                    let placed = if attack.kind == AttackKind::Hcb {
                        hcb_attack(model, &s.image, &s.labels, attack)?
                    } else {
                        shapeloc_attack(model, &s.image, &s.labels, attack)?
                    };
                    placed.apply(&s.image)
                }
            }
        })
        .collect();

    let mut out = Dataset::new(data.split_name.clone());
    for (s, img) in data.samples.iter().zip(images) {
        out.samples.push(Sample {
            name: s.name.clone(),
            image: img?,
            labels: s.labels.clone(),
        });
    }
    Ok(out)
}
