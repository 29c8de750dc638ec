//! Patch archive: `<stem>.png` plus a `<stem>.txt` key=value sidecar.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::augment::{PatchPixels, PatchType};
use crate::data::{read_image, write_image};
use crate::{PodError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PatchArchiveMeta {
    pub kind: String,
    pub size: usize,
    pub seed: u64,
    pub objective: f64,
    pub epoch: Option<usize>,
}

pub fn write_patch_archive(
    dir: &Path,
    stem: &str,
    patch: &PatchPixels,
    meta: &PatchArchiveMeta,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| PodError::io(dir, e))?;
    write_image(&dir.join(format!("{stem}.png")), &patch.to_image())?;
    let mut text = String::new();
    let _ = writeln!(text, "kind={}", meta.kind);
    let _ = writeln!(text, "size={}", meta.size);
    let _ = writeln!(text, "seed={}", meta.seed);
    let _ = writeln!(text, "objective={}", meta.objective);
    if let Some(e) = meta.epoch {
        let _ = writeln!(text, "epoch={e}");
    }
    let path = dir.join(format!("{stem}.txt"));
    fs::write(&path, text).map_err(|e| PodError::io(&path, e))
}

/// Reads an archived patch. Pixels come back quantized to 8 bits.
pub fn read_patch_archive(dir: &Path, stem: &str) -> Result<(PatchPixels, PatchArchiveMeta)> {
    let image = read_image(&dir.join(format!("{stem}.png")))?;
    let patch = PatchPixels::from_image(PatchType::External, &image)?;
    let path = dir.join(format!("{stem}.txt"));
    let text = fs::read_to_string(&path).map_err(|e| PodError::io(&path, e))?;
    let mut meta = PatchArchiveMeta {
        kind: String::new(),
        size: patch.side(),
        seed: 0,
        objective: f64::NAN,
        epoch: None,
    };
    for (i, line) in text.lines().enumerate() {
        let bad = |m: &str| PodError::Parse {
            file: path.clone(),
            line: i + 1,
            message: m.to_string(),
        };
        let Some((k, v)) = line.split_once('=') else {
            continue;
        };
        match k.trim() {
            "kind" => meta.kind = v.trim().to_string(),
            "size" => meta.size = v.trim().parse().map_err(|_| bad("invalid size"))?,
            "seed" => meta.seed = v.trim().parse().map_err(|_| bad("invalid seed"))?,
            "objective" => {
                meta.objective = v.trim().parse().map_err(|_| bad("invalid objective"))?
            }
            "epoch" => meta.epoch = Some(v.trim().parse().map_err(|_| bad("invalid epoch"))?),
            _ => {}
        }
    }
    Ok((patch, meta))
}
