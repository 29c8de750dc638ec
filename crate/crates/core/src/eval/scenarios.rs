use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::average_precision;
use super::report::{EvalReport, ReportCell};
use crate::attacks::{apply_attack_scenario, AttackConfig};
use crate::data::{Dataset, HUMAN};
use crate::detector::{predict, resize_dataset, DetectorModel};
use crate::{stream, PodError, Result};

pub const CLEAN_SCENARIO: &str = "clean";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// `None` evaluates the unmodified dataset.
    pub attack: Option<AttackConfig>,
}

impl Scenario {
    pub fn clean() -> Self {
        Scenario {
            name: CLEAN_SCENARIO.into(),
            attack: None,
        }
    }

    pub fn attack(name: impl Into<String>, attack: AttackConfig) -> Self {
        Scenario {
            name: name.into(),
            attack: Some(attack),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelEntry {
    pub label: String,
    pub model: DetectorModel,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub repeats: usize,
    pub seed: u64,
    pub conf_threshold: f64,
    pub nms_iou: f64,
    pub iou_threshold: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            repeats: 5,
            seed: 0,
            conf_threshold: 0.001,
            nms_iou: 0.5,
            iou_threshold: 0.5,
        }
    }
}

/// Human-class AP@`iou_threshold` of `model` on `dataset`.
pub fn dataset_ap(model: &DetectorModel, dataset: &Dataset, options: &EvalOptions) -> Result<f64> {
    let preds: Vec<Result<Vec<_>>> = dataset
        .samples
        .par_iter()
        .map(|s| predict(model, &s.image, options.conf_threshold, options.nms_iou))
        .collect();
    let mut dets = Vec::new();
    for (i, p) in preds.into_iter().enumerate() {
        dets.extend(p?.into_iter().map(|d| (d, i)));
    }
    let gts: Vec<_> = dataset
        .samples
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.labels.iter().map(move |b| (*b, i)))
        .collect();
    Ok(average_precision(&dets, &gts, HUMAN, options.iou_threshold))
}

/// Scenario list actually evaluated: a clean column first unless the caller
/// already named one.
pub fn with_clean(scenarios: &[Scenario]) -> Vec<Scenario> {
    let mut all = Vec::with_capacity(scenarios.len() + 1);
    if !scenarios.iter().any(|s| s.name == CLEAN_SCENARIO) {
        all.push(Scenario::clean());
    }
    all.extend(scenarios.iter().cloned());
    all
}

/// AP of one model on one scenario for repeat `repeat`.
///
/// The attack randomness comes from the stream `(seed, "eval", name, repeat)`,
/// shared by all models, so adding a scenario or a model leaves the other
/// cells unchanged.
pub fn evaluate_cell(
    model: &DetectorModel,
    dataset: &Dataset,
    scenario: &Scenario,
    options: &EvalOptions,
    repeat: usize,
) -> Result<f64> {
    let data = resize_dataset(dataset, model.input_size());
    match &scenario.attack {
        None => dataset_ap(model, &data, options),
        Some(attack) => {
            let mut rng = stream!(options.seed, "eval", scenario.name.as_str(), repeat);
            let attacked = apply_attack_scenario(model, &data, attack, &mut rng)?;
            dataset_ap(model, &attacked, options)
        }
    }
}

/// Evaluates every model on every scenario `repeats` times (see
/// [`evaluate_cell`]). A clean column is always included.
pub fn evaluate_scenarios(
    models: &[ModelEntry],
    dataset: &Dataset,
    scenarios: &[Scenario],
    options: &EvalOptions,
) -> Result<EvalReport> {
    if options.repeats == 0 {
        return Err(PodError::config("eval.repeats", "must be at least 1"));
    }
    let all = with_clean(scenarios);
    let mut cells = Vec::new();
    for entry in models {
        for scenario in &all {
            let mut aps = Vec::with_capacity(options.repeats);
            for r in 0..options.repeats {
                let ap = evaluate_cell(&entry.model, dataset, scenario, options, r)?;
                log::info!(
                    "{} / {} / repeat {r}: AP {ap:.4}",
                    entry.label,
                    scenario.name
                );
                aps.push(ap);
            }
            cells.push(ReportCell::from_samples(
                &entry.label,
                &scenario.name,
                aps,
                entry.wall_time_s,
            ));
        }
    }
    Ok(EvalReport {
        seed: options.seed,
        repeats: options.repeats,
        scenarios: all.iter().map(|s| s.name.clone()).collect(),
        cells,
    })
}
