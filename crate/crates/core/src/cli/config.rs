//! Run configuration file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackConfig, AttackKind};
use crate::augment::AugmentConfig;
use crate::data::SynthConfig;
use crate::detector::{AdvSchedule, Architecture, ClassWeights, TrainConfig, TrainMode};
use crate::eval::{EvalOptions, Scenario, Threshold};
use crate::seed::derive;
use crate::{PodError, Result};

/// Everything a run needs. Component seeds are derived from `seed` by
/// [`RunConfig::resolve`]; any seeds written in the file are overwritten.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub dataset: DatasetSection,
    pub train: TrainSection,
    pub attacks: Vec<Scenario>,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Directory in the `<split>/images`, `<split>/labels` layout. Synthetic
    /// scenes are generated when absent.
    pub root: Option<PathBuf>,
    pub train_split: String,
    pub test_split: String,
    /// Keep only persons whose larger side exceeds this many pixels.
    pub min_size_px: Option<f64>,
    pub synth: SynthSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub train: SynthConfig,
    pub train_count: usize,
    pub test: SynthConfig,
    pub test_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub modes: Vec<TrainMode>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub class_weights: ClassWeights,
    pub augment: AugmentConfig,
    pub adv: AdvSchedule,
    pub arch: Architecture,
    /// Derived; shared by all modes so they start from the same weights.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub repeats: usize,
    pub conf_threshold: f64,
    pub nms_iou: f64,
    pub iou_threshold: f64,
    /// Retrain every mode for each repeat instead of re-sampling only the
    /// attack randomness. Training wall time then varies between runs.
    pub retrain_per_repeat: bool,
    pub thresholds: Vec<Threshold>,
    /// Derived.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("runs/default"),
            dataset: DatasetSection::default(),
            train: TrainSection::default(),
            attacks: default_attacks(),
            eval: EvalSection::default(),
        }
    }
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            root: None,
            train_split: "train".into(),
            test_split: "test".into(),
            min_size_px: None,
            synth: SynthSection::default(),
        }
    }
}

impl Default for SynthSection {
    fn default() -> Self {
        let train = SynthConfig {
            image_size: 64,
            ..SynthConfig::default()
        };
        let test = SynthConfig {
            persons_per_image: (1, 1),
            ..train.clone()
        };
        SynthSection {
            train,
            train_count: 400,
            test,
            test_count: 100,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let base = TrainConfig::default();
        TrainSection {
            modes: vec![TrainMode::Std, TrainMode::Pod, TrainMode::PodNodet],
            epochs: base.epochs,
            batch_size: base.batch_size,
            learning_rate: base.learning_rate,
            class_weights: base.class_weights,
            augment: base.augment,
            adv: base.adv,
            arch: Architecture::compact(),
            seed: 0,
        }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        let base = EvalOptions::default();
        EvalSection {
            repeats: base.repeats,
            conf_threshold: base.conf_threshold,
            nms_iou: base.nms_iou,
            iou_threshold: base.iou_threshold,
            retrain_per_repeat: false,
            thresholds: Vec::new(),
            seed: 0,
        }
    }
}

fn default_attacks() -> Vec<Scenario> {
    vec![
        Scenario::attack("noise", AttackConfig::default()),
        Scenario::attack(
            "universal",
            AttackConfig {
                kind: AttackKind::Universal,
                ..AttackConfig::default()
            },
        ),
    ]
}

impl TrainSection {
    pub fn config_for(&self, mode: TrainMode) -> TrainConfig {
        TrainConfig {
            mode,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            class_weights: self.class_weights,
            augment: self.augment.clone(),
            adv: self.adv.clone(),
            arch: self.arch.clone(),
            seed: self.seed,
        }
    }
}

impl EvalSection {
    pub fn options(&self) -> EvalOptions {
        EvalOptions {
            repeats: self.repeats,
            seed: self.seed,
            conf_threshold: self.conf_threshold,
            nms_iou: self.nms_iou,
            iou_threshold: self.iou_threshold,
        }
    }
}

impl RunConfig {
    /// Parses a configuration file; errors name the offending field path.
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            PodError::Config {
                field: if path == "." {
                    origin.display().to_string()
                } else {
                    path
                },
                message: e.into_inner().to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| PodError::io(path, e))?;
        Self::from_json(&text, path)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Fans the global seed out to every component.
    pub fn resolve(&mut self) {
        let g = self.seed;
        let data_seed = derive(g, &["data".into()]);
        self.dataset.synth.train.seed = data_seed;
        self.dataset.synth.test.seed = data_seed;
        self.train.seed = derive(g, &["train".into()]);
        self.train.adv.attack.seed = 0;
        self.eval.seed = derive(g, &["eval".into()]);
        for a in &mut self.attacks {
            if let Some(cfg) = &mut a.attack {
                cfg.seed = 0;
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(root) = &self.dataset.root {
            if !root.is_dir() {
                return Err(PodError::config(
                    "dataset.root",
                    format!("{} does not exist", root.display()),
                ));
            }
        } else {
            let s = &self.dataset.synth;
            prefix("dataset.synth.train", s.train.validate())?;
            prefix("dataset.synth.test", s.test.validate())?;
            if s.train_count == 0 {
                return Err(PodError::config(
                    "dataset.synth.train_count",
                    "must be positive",
                ));
            }
            if s.test_count == 0 {
                return Err(PodError::config(
                    "dataset.synth.test_count",
                    "must be positive",
                ));
            }
        }
        if let Some(m) = self.dataset.min_size_px {
            if !(m >= 0.0 && m.is_finite()) {
                return Err(PodError::config(
                    "dataset.min_size_px",
                    "must be nonnegative",
                ));
            }
        }
        if self.train.modes.is_empty() {
            return Err(PodError::config(
                "train.modes",
                "at least one mode required",
            ));
        }
        for (i, m) in self.train.modes.iter().enumerate() {
            if self.train.modes[..i].contains(m) {
                return Err(PodError::config(
                    format!("train.modes[{i}]"),
                    format!("duplicate mode {m}"),
                ));
            }
            self.train.config_for(*m).validate().map_err(|e| match e {
                PodError::Config { field, message } if !field.starts_with("train.") => {
                    PodError::Config {
                        field: format!("train.{field}"),
                        message,
                    }
                }
                other => other,
            })?;
        }
        for (i, a) in self.attacks.iter().enumerate() {
            if a.name.is_empty() || a.name.contains([',', '/', '\\', '|']) {
                return Err(PodError::config(
                    format!("attacks[{i}].name"),
                    "must be non-empty without , / \\ or |",
                ));
            }
            if self.attacks[..i].iter().any(|b| b.name == a.name) {
                return Err(PodError::config(
                    format!("attacks[{i}].name"),
                    "duplicate name",
                ));
            }
            if let Some(cfg) = &a.attack {
                prefix(&format!("attacks[{i}].attack"), cfg.validate())?;
            }
        }
        if self.eval.repeats == 0 {
            return Err(PodError::config("eval.repeats", "must be at least 1"));
        }
        for (name, v) in [
            ("eval.nms_iou", self.eval.nms_iou),
            ("eval.iou_threshold", self.eval.iou_threshold),
            ("eval.conf_threshold", self.eval.conf_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(PodError::config(name, "must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn scenario_by_kind(&self, kind: AttackKind) -> Option<&Scenario> {
        self.attacks
            .iter()
            .find(|s| s.attack.as_ref().is_some_and(|a| a.kind == kind))
    }
}

/// Qualifies the field of a nested config error with its section path.
fn prefix(section: &str, r: Result<()>) -> Result<()> {
    r.map_err(|e| match e {
        PodError::Config { field, message } => {
            let leaf = field.rsplit('.').next().unwrap_or(&field).to_string();
            PodError::Config {
                field: format!("{section}.{leaf}"),
                message,
            }
        }
        other => other,
    })
}
