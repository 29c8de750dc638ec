use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::RunConfig;
use crate::attacks::{
    apply_attack_scenario, write_patch_archive, AttackConfig, AttackKind, PatchArchiveMeta,
};
use crate::data::{export_dataset, filter_persons, load_dataset, synth_dataset, Dataset, HUMAN};
use crate::detector::{
    augmented_samples, load_checkpoint, save_checkpoint, train, train_with_progress, Checkpoint,
    TrainMode,
};
use crate::eval::{
    dataset_ap, evaluate_cell, evaluate_scenarios, with_clean, EvalReport, ModelEntry, ReportCell,
    Scenario,
};
use crate::seed::derive;
use crate::{stream, PodError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    ThresholdFailed,
}

pub const LOCK_FILE: &str = "run.lock";

fn data_dir(config: &RunConfig) -> PathBuf {
    config.out.join("data")
}

fn models_dir(config: &RunConfig) -> PathBuf {
    config.out.join("models")
}

fn report_dir(config: &RunConfig) -> PathBuf {
    config.out.join("report")
}

pub fn checkpoint_path(config: &RunConfig, mode: TrainMode) -> PathBuf {
    models_dir(config).join(format!("{mode}.podmodel"))
}

pub(super) fn write_lock(config: &RunConfig) -> Result<()> {
    fs::create_dir_all(&config.out).map_err(|e| PodError::io(&config.out, e))?;
    let path = config.out.join(LOCK_FILE);
    fs::write(&path, config.to_json()).map_err(|e| PodError::io(&path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| PodError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| PodError::io(path, e))
}

fn load_prepared(config: &RunConfig, split: &str) -> Result<Dataset> {
    let dir = data_dir(config);
    if !dir.join(split).is_dir() {
        return Err(PodError::Load {
            path: dir.join(split),
            message: "prepared split not found; run `pod prepare` first".into(),
        });
    }
    load_dataset(&dir, split)
}

fn load_model(config: &RunConfig, mode: TrainMode) -> Result<Checkpoint> {
    let path = checkpoint_path(config, mode);
    if !path.is_file() {
        return Err(PodError::Load {
            path,
            message: format!("checkpoint missing; run `pod train --mode {mode}` first"),
        });
    }
    let ckpt = load_checkpoint(&path)?;
    if ckpt.meta.train_config != config.train.config_for(mode) {
        log::warn!("{}: trained with a different configuration", path.display());
    }
    Ok(ckpt)
}

pub fn cmd_prepare(config: &RunConfig) -> Result<Outcome> {
    let ds = &config.dataset;
    let splits = [
        (&ds.train_split, &ds.synth.train, ds.synth.train_count),
        (&ds.test_split, &ds.synth.test, ds.synth.test_count),
    ];
    for (split, synth, count) in splits {
        let mut data = match &ds.root {
            Some(root) => load_dataset(root, split)?,
            None => synth_dataset(synth, count, split)?,
        };
        if let Some(min) = ds.min_size_px {
            let before = (data.len(), data.label_count(HUMAN));
            let (kept, stats) = filter_persons(&data, min);
            println!(
                "{split}: filter > {min} px kept {}/{} images, {}/{} person labels",
                stats.images, before.0, stats.labels, before.1
            );
            data = kept;
        }
        data.split_name = split.clone();
        let dir = data_dir(config).join(split);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| PodError::io(&dir, e))?;
        }
        export_dataset(&data, &data_dir(config))?;
        println!(
            "{split}: {} images, {} person labels -> {}",
            data.len(),
            data.label_count(HUMAN),
            dir.display()
        );
    }
    Ok(Outcome::Success)
}

pub fn cmd_train(
    config: &RunConfig,
    mode: Option<TrainMode>,
    dump_augmented: usize,
) -> Result<Outcome> {
    let data = load_prepared(config, &config.dataset.train_split)?;
    let modes = match mode {
        Some(m) => vec![m],
        None => config.train.modes.clone(),
    };
    let dir = models_dir(config);
    for mode in modes {
        let cfg = config.train.config_for(mode);
        if dump_augmented > 0 {
            let mut views = augmented_samples(&data, &cfg, 0, dump_augmented)?;
            views.split_name = mode.to_string();
            export_dataset(&views, &config.out.join("augmented"))?;
        }
        let mut log_text = String::new();
        let outcome = train_with_progress(&data, &cfg, |e| {
            let _ = writeln!(log_text, "{e}");
            println!("{mode} {e}");
        })?;
        let wall = outcome.wall_time.as_secs_f64();
        let _ = writeln!(
            log_text,
            "done wall_s={wall:.3} patches={}",
            outcome.history.len()
        );
        write_text(&dir.join(format!("{mode}.log")), &log_text)?;
        if mode.is_adversarial() {
            let pdir = dir.join(format!("{mode}_patches"));
            if pdir.exists() {
                fs::remove_dir_all(&pdir).map_err(|e| PodError::io(&pdir, e))?;
            }
            for g in &outcome.history.entries {
                let meta = PatchArchiveMeta {
                    kind: AttackKind::Universal.to_string(),
                    size: g.patch.side(),
                    seed: g.seed,
                    objective: g.objective,
                    epoch: Some(g.epoch),
                };
                write_patch_archive(&pdir, &format!("epoch_{:03}", g.epoch), &g.patch, &meta)?;
            }
        }
        let path = checkpoint_path(config, mode);
        save_checkpoint(&path, &outcome.model, &cfg, wall, outcome.history.len())?;
        println!(
            "{mode}: {} params, {wall:.1} s -> {}",
            outcome.model.params.len(),
            path.display()
        );
    }
    Ok(Outcome::Success)
}

fn find_scenario(config: &RunConfig, kind: AttackKind, name: Option<&str>) -> Result<Scenario> {
    if let Some(name) = name {
        return match config.attacks.iter().find(|s| s.name == name) {
            Some(s) if s.attack.as_ref().is_some_and(|a| a.kind == kind) => Ok(s.clone()),
            Some(_) => Err(PodError::config(
                "attacks",
                format!("scenario `{name}` is not a {kind} attack"),
            )),
            None => Err(PodError::config(
                "attacks",
                format!("no scenario named `{name}`"),
            )),
        };
    }
    Ok(config.scenario_by_kind(kind).cloned().unwrap_or_else(|| {
        Scenario::attack(
            kind.as_str(),
            AttackConfig {
                kind,
                ..AttackConfig::default()
            },
        )
    }))
}

pub fn cmd_attack(
    config: &RunConfig,
    kind: AttackKind,
    name: Option<&str>,
    mode: Option<TrainMode>,
) -> Result<Outcome> {
    let scenario = find_scenario(config, kind, name)?;
    let attack = scenario.attack.as_ref().expect("attack scenario");
    let mode = mode.unwrap_or(config.train.modes[0]);
    let model = load_model(config, mode)?.model;
    let test = load_prepared(config, &config.dataset.test_split)?;
    let size = model.input_size();
    let mut data = test.clone();
    for s in &mut data.samples {
        s.image = s.image.resized(size, size);
    }
    // Same stream as repeat 0 of `evaluate`.
    let mut rng = stream!(config.eval.seed, "eval", scenario.name.as_str(), 0usize);
    let mut attacked = apply_attack_scenario(&model, &data, attack, &mut rng)?;
    let options = config.eval.options();
    let clean = dataset_ap(&model, &data, &options)?;
    let ap = dataset_ap(&model, &attacked, &options)?;
    attacked.split_name = mode.to_string();
    let root = config.out.join("attacks").join(&scenario.name);
    let dir = root.join(mode.as_str());
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| PodError::io(&dir, e))?;
    }
    export_dataset(&attacked, &root)?;
    println!(
        "{} on {mode}: AP clean {clean:.4}, attacked {ap:.4} -> {}",
        scenario.name,
        dir.display()
    );
    Ok(Outcome::Success)
}

fn retrained_report(config: &RunConfig, test: &Dataset) -> Result<EvalReport> {
    let train_data = load_prepared(config, &config.dataset.train_split)?;
    let options = config.eval.options();
    let scenarios = with_clean(&config.attacks);
    let modes = &config.train.modes;
    let mut aps = vec![vec![Vec::new(); scenarios.len()]; modes.len()];
    let mut walls = vec![0.0; modes.len()];
    for r in 0..options.repeats {
        for (mi, mode) in modes.iter().enumerate() {
            let mut cfg = config.train.config_for(*mode);
            cfg.seed = derive(cfg.seed, &["repeat".into(), r.into()]);
            let outcome = train(&train_data, &cfg)?;
            walls[mi] += outcome.wall_time.as_secs_f64() / options.repeats as f64;
            for (si, sc) in scenarios.iter().enumerate() {
                aps[mi][si].push(evaluate_cell(&outcome.model, test, sc, &options, r)?);
            }
        }
    }
    let mut cells = Vec::new();
    for (mi, mode) in modes.iter().enumerate() {
        for (si, sc) in scenarios.iter().enumerate() {
            cells.push(ReportCell::from_samples(
                mode.as_str(),
                &sc.name,
                std::mem::take(&mut aps[mi][si]),
                walls[mi],
            ));
        }
    }
    Ok(EvalReport {
        seed: options.seed,
        repeats: options.repeats,
        scenarios: scenarios.into_iter().map(|s| s.name).collect(),
        cells,
    })
}

pub fn cmd_evaluate(config: &RunConfig) -> Result<Outcome> {
    let test = load_prepared(config, &config.dataset.test_split)?;
    let report = if config.eval.retrain_per_repeat {
        retrained_report(config, &test)?
    } else {
        let mut models = Vec::new();
        for mode in &config.train.modes {
            let ckpt = load_model(config, *mode)?;
            models.push(ModelEntry {
                label: mode.to_string(),
                model: ckpt.model,
                wall_time_s: ckpt.meta.wall_time_s,
            });
        }
        evaluate_scenarios(&models, &test, &config.attacks, &config.eval.options())?
    };
    let dir = report_dir(config);
    write_text(&dir.join("report.csv"), &report.to_csv())?;
    write_text(&dir.join("report.md"), &report.to_markdown())?;
    let json =
        serde_json::to_string_pretty(&report).map_err(|e| PodError::contract(e.to_string()))?;
    write_text(&dir.join("report.json"), &json)?;
    print!("{}", report.to_markdown());
    Ok(check_thresholds(config, &report))
}

fn check_thresholds(config: &RunConfig, report: &EvalReport) -> Outcome {
    let outcomes = report.check(&config.eval.thresholds);
    let mut failed = false;
    for o in &outcomes {
        let value = o.value.map_or("missing".to_string(), |v| format!("{v:.4}"));
        println!(
            "{} {} ({value})",
            if o.passed { "PASS" } else { "FAIL" },
            o.name
        );
        failed |= !o.passed;
    }
    if failed {
        Outcome::ThresholdFailed
    } else {
        Outcome::Success
    }
}

pub fn cmd_report(config: &RunConfig) -> Result<Outcome> {
    let path = report_dir(config).join("report.json");
    let text = fs::read_to_string(&path).map_err(|e| PodError::io(&path, e))?;
    let report: EvalReport = serde_json::from_str(&text).map_err(|e| PodError::Load {
        path: path.clone(),
        message: e.to_string(),
    })?;
    print!("{}", report.to_markdown());
    Ok(check_thresholds(config, &report))
}
