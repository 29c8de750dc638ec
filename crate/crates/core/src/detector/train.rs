//! Mini-batch Adam training for the five training modes.
//!
//! Randomness is keyed per `(seed, epoch, sample)` so the result does not
//! depend on the rayon thread count: per-sample gradients are computed in
//! parallel and summed in batch order.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{detection_loss_grad, ClassWeights, LossTerms};
use super::net::{Architecture, DetectorModel};
use crate::attacks::{optimize_universal_patch_scored, AttackConfig, AttackKind, LocationPolicy};
use crate::augment::{augment_with_payloads, pod_augment, AugmentConfig, PatchPixels};
use crate::data::{BBox, Dataset, Image, Sample, HUMAN, PATCH};
use crate::{stream, PodError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Std,
    Pod,
    PodNodet,
    Advpod,
    AdvpodNodet,
}

impl TrainMode {
    pub const ALL: [TrainMode; 5] = [
        TrainMode::Std,
        TrainMode::PodNodet,
        TrainMode::Pod,
        TrainMode::AdvpodNodet,
        TrainMode::Advpod,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TrainMode::Std => "std",
            TrainMode::Pod => "pod",
            TrainMode::PodNodet => "pod_nodet",
            TrainMode::Advpod => "advpod",
            TrainMode::AdvpodNodet => "advpod_nodet",
        }
    }

    /// Row label used in rendered tables.
    pub fn display_name(&self) -> &'static str {
        match self {
            TrainMode::Std => "Std. Training",
            TrainMode::Pod => "POD",
            TrainMode::PodNodet => "POD_noDet",
            TrainMode::Advpod => "Adv-POD",
            TrainMode::AdvpodNodet => "Adv-POD_noDet",
        }
    }

    pub fn is_adversarial(&self) -> bool {
        matches!(self, TrainMode::Advpod | TrainMode::AdvpodNodet)
    }

    pub fn emits_patch_labels(&self) -> bool {
        matches!(self, TrainMode::Pod | TrainMode::Advpod)
    }

    pub fn augments(&self) -> bool {
        !matches!(self, TrainMode::Std)
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainMode {
    type Err = PodError;

    fn from_str(s: &str) -> Result<Self> {
        TrainMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                PodError::config(
                    "mode",
                    format!(
                        "unknown mode `{s}` (expected std, pod, pod_nodet, advpod, advpod_nodet)"
                    ),
                )
            })
    }
}

/// Adversarial patch regeneration schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvSchedule {
    pub start_epoch: usize,
    pub period: usize,
    /// Attack used to generate each new patch.
    pub attack: AttackConfig,
}

impl Default for AdvSchedule {
    fn default() -> Self {
        AdvSchedule {
            start_epoch: 5,
            period: 15,
            attack: AttackConfig {
                kind: AttackKind::Universal,
                location_policy: LocationPolicy::FixedOnPerson,
                steps: 200,
                ..AttackConfig::default()
            },
        }
    }
}

impl AdvSchedule {
    pub fn is_generation_epoch(&self, epoch: usize) -> bool {
        epoch >= self.start_epoch && (epoch - self.start_epoch).is_multiple_of(self.period.max(1))
    }

    pub fn generation_epochs(&self, epochs: usize) -> Vec<usize> {
        (0..epochs)
            .filter(|&e| self.is_generation_epoch(e))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub class_weights: ClassWeights,
    pub augment: AugmentConfig,
    pub adv: AdvSchedule,
    pub arch: Architecture,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Std,
            epochs: 60,
            batch_size: 16,
            learning_rate: 3e-3,
            class_weights: ClassWeights::default(),
            augment: AugmentConfig::default(),
            adv: AdvSchedule::default(),
            arch: Architecture::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.augment.validate()?;
        if self.batch_size == 0 {
            return Err(PodError::config("train.batch_size", "must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(PodError::config("train.learning_rate", "must be positive"));
        }
        let w = self.class_weights;
        if !(w.human >= 0.0 && w.patch >= 0.0) {
            return Err(PodError::config(
                "train.class_weights",
                "must be nonnegative",
            ));
        }
        if self.adv.period == 0 {
            return Err(PodError::config("train.adv.period", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedPatch {
    pub epoch: usize,
    pub patch: PatchPixels,
    /// Attack surrogate objective at generation time.
    pub objective: f64,
    pub seed: u64,
}

/// Adversarial patches produced during training, in generation order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PatchHistory {
    pub entries: Vec<GeneratedPatch>,
}

impl PatchHistory {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn patches(&self) -> Vec<PatchPixels> {
        self.entries.iter().map(|e| e.patch.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_s: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} loss={:.6} wall_s={:.3}",
            self.epoch, self.mean_loss, self.wall_s
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DetectorModel,
    pub history: PatchHistory,
    pub wall_time: Duration,
    pub log: Vec<EpochLog>,
    /// Number of class-1 boxes passed to the loss over the whole run.
    pub patch_targets_seen: usize,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.t);
        let bc2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= self.lr * mh / (vh.sqrt() + Self::EPS);
        }
    }
}

/// Resamples every image to `size x size`.
pub(crate) fn resize_dataset(dataset: &Dataset, size: usize) -> Dataset {
    let mut out = dataset.clone();
    for s in &mut out.samples {
        if s.image.width() != size || s.image.height() != size {
            s.image = s.image.resized(size, size);
        }
    }
    out
}

/// Builds the training view of one sample for the given mode.
fn training_sample(
    image: &Image,
    labels: &[BBox],
    config: &TrainConfig,
    history: &[PatchPixels],
    rng: &mut crate::seed::PodRng,
) -> Result<(Image, Vec<BBox>)> {
    let mode = config.mode;
    let base: Vec<BBox> = labels
        .iter()
        .filter(|b| b.class_id == HUMAN || mode.emits_patch_labels())
        .copied()
        .collect();
    if !mode.augments() {
        return Ok((image.clone(), base));
    }
    let aug_cfg = AugmentConfig {
        emit_patch_labels: mode.emits_patch_labels(),
        ..config.augment.clone()
    };
    let out = if mode.is_adversarial() && !history.is_empty() {
        augment_with_payloads(image, &base, history, &aug_cfg, rng)?
    } else {
        pod_augment(image, &base, &aug_cfg, rng)?
    };
    Ok((out.image, out.labels))
}

/// The first `count` training views of epoch `epoch`, exactly as the
/// training loop would build them before any adversarial patch exists.
pub fn augmented_samples(
    dataset: &Dataset,
    config: &TrainConfig,
    epoch: usize,
    count: usize,
) -> Result<Dataset> {
    config.validate()?;
    let data = resize_dataset(dataset, config.arch.input_size);
    let mut samples = Vec::with_capacity(count.min(data.len()));
    for (idx, sample) in data.samples.iter().take(count).enumerate() {
        let mut rng = stream!(config.seed, "augment", epoch, idx);
        let (image, labels) =
            training_sample(&sample.image, &sample.labels, config, &[], &mut rng)?;
        samples.push(Sample {
            name: sample.name.clone(),
            image,
            labels,
        });
    }
    Ok(Dataset {
        split_name: format!("{}_augmented", data.split_name),
        samples,
    })
}

pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(dataset, config, |_| {})
}

/// As [`train`], calling `on_epoch` after every epoch.
pub fn train_with_progress(
    dataset: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(PodError::contract("training dataset is empty"));
    }
    let start = Instant::now();
    let data = resize_dataset(dataset, config.arch.input_size);
    let mut model = DetectorModel::init(config.arch.clone(), &mut stream!(config.seed, "init"))?;
    let mut adam = Adam::new(model.params.len(), config.learning_rate);
    let mut history = PatchHistory::default();
    let mut log = Vec::with_capacity(config.epochs);
    let mut patch_targets_seen = 0usize;

    for epoch in 0..config.epochs {
        if config.mode.is_adversarial() && config.adv.is_generation_epoch(epoch) {
            let seed = crate::seed::derive(config.seed, &["advgen".into(), epoch.into()]);
            let attack = AttackConfig {
                seed,
                ..config.adv.attack.clone()
            };
            let (patch, objective) = optimize_universal_patch_scored(&model, &data, &attack)?;
            log::info!("epoch {epoch}: generated adversarial patch (objective {objective:.4})");
            history.entries.push(GeneratedPatch {
                epoch,
                patch,
                objective,
                seed,
            });
        }
        let payloads = history.patches();

        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut stream!(config.seed, "shuffle", epoch));

        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let results: Vec<Result<(f64, Vec<f64>, usize)>> = batch
                .par_iter()
                .map(|&idx| {
                    let sample = &data.samples[idx];
                    let mut rng = stream!(config.seed, "augment", epoch, idx);
                    let (image, targets) = training_sample(
                        &sample.image,
                        &sample.labels,
                        config,
                        &payloads,
                        &mut rng,
                    )?;
                    let patch_targets = targets.iter().filter(|b| b.class_id == PATCH).count();
                    let (raw, cache) = model.forward_cached(&image);
                    let (loss, d_raw) =
                        detection_loss_grad(&raw, &targets, config.class_weights, LossTerms::ALL)?;
                    let (grads, _) = model.backward(&cache, &d_raw, false);
                    Ok((loss.total(), grads, patch_targets))
                })
                .collect();

            let scale = 1.0 / batch.len() as f64;
            let mut grad_sum = vec![0.0; model.params.len()];
            let mut batch_loss = 0.0;
            for r in results {
                let (loss, grads, patch_targets) = r?;
                batch_loss += loss;
                patch_targets_seen += patch_targets;
                for (acc, g) in grad_sum.iter_mut().zip(&grads) {
                    *acc += g;
                }
            }
            batch_loss *= scale;
            if !batch_loss.is_finite() || grad_sum.iter().any(|g| !g.is_finite()) {
                return Err(PodError::Diverged {
                    epoch,
                    batch: batch_idx,
                });
            }
            for g in &mut grad_sum {
                *g *= scale;
            }
            adam.step(&mut model.params, &grad_sum);
            epoch_loss += batch_loss * batch.len() as f64;
        }
        let entry = EpochLog {
            epoch,
            mean_loss: epoch_loss / data.len() as f64,
            wall_s: start.elapsed().as_secs_f64(),
        };
        on_epoch(&entry);
        log.push(entry);
    }

    Ok(TrainOutcome {
        model,
        history,
        wall_time: start.elapsed(),
        log,
        patch_targets_seen,
    })
}
