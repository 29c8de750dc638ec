//! On-disk corpus format: `<root>/<split>/images/*.{png,pgm}` paired by stem
//! with `<root>/<split>/labels/*.txt`, one `class cx cy bw bh` line per box.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{BBox, Dataset, Image, Sample};
use crate::{PodError, Result};

const IMAGE_EXTENSIONS: &[&str] = &["png", "pgm", "pnm"];

pub fn load_dataset(root: &Path, split: &str) -> Result<Dataset> {
    let split_dir = root.join(split);
    let images_dir = split_dir.join("images");
    let labels_dir = split_dir.join("labels");
    for dir in [&images_dir, &labels_dir] {
        if !dir.is_dir() {
            return Err(PodError::Load {
                path: dir.clone(),
                message: "directory not found".into(),
            });
        }
    }

    let mut image_paths: Vec<PathBuf> = fs::read_dir(&images_dir)
        .map_err(|e| PodError::io(&images_dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
                .unwrap_or(false)
        })
        .collect();
    image_paths.sort();

    let mut dataset = Dataset::new(split);
    for path in image_paths {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let image = read_image(&path)?;
        let label_path = labels_dir.join(format!("{stem}.txt"));
        let labels = if label_path.exists() {
            read_labels(&label_path)?
        } else {
            Vec::new()
        };
        dataset.samples.push(Sample {
            name: stem,
            image,
            labels,
        });
    }
    Ok(dataset)
}

pub fn read_image(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|e| PodError::Load {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    Image::from_u8(w as usize, h as usize, gray.as_raw())
}

pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| PodError::io(parent, e))?;
    }
    let buf =
        image::GrayImage::from_raw(image.width() as u32, image.height() as u32, image.to_u8())
            .expect("buffer matches dimensions");
    buf.save(path).map_err(|e| PodError::Load {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Parses a label file; boxes are clipped to the unit square.
pub fn read_labels(path: &Path) -> Result<Vec<BBox>> {
    let text = fs::read_to_string(path).map_err(|e| PodError::io(path, e))?;
    let mut boxes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| PodError::Parse {
            file: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(parse_err(format!(
                "expected 5 fields, found {}",
                fields.len()
            )));
        }
        let class_id: u8 = fields[0]
            .parse()
            .map_err(|_| parse_err(format!("invalid class id `{}`", fields[0])))?;
        let mut vals = [0.0f64; 4];
        for (v, f) in vals.iter_mut().zip(&fields[1..]) {
            *v = f
                .parse()
                .ok()
                .filter(|x: &f64| x.is_finite())
                .ok_or_else(|| parse_err(format!("invalid number `{f}`")))?;
        }
        if vals[2] < 0.0 || vals[3] < 0.0 {
            return Err(parse_err("negative box size".into()));
        }
        boxes.push(BBox::new(class_id, vals[0], vals[1], vals[2], vals[3]).clamped());
    }
    Ok(boxes)
}

pub fn write_labels(path: &Path, labels: &[BBox]) -> Result<()> {
    let mut text = String::new();
    for b in labels {
        let _ = writeln!(text, "{} {} {} {} {}", b.class_id, b.cx, b.cy, b.bw, b.bh);
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| PodError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| PodError::io(path, e))
}

/// Writes `dataset` under `<root>/<split_name>/`.
pub fn export_dataset(dataset: &Dataset, root: &Path) -> Result<()> {
    let split_dir = root.join(&dataset.split_name);
    let images_dir = split_dir.join("images");
    let labels_dir = split_dir.join("labels");
    for dir in [&images_dir, &labels_dir] {
        fs::create_dir_all(dir).map_err(|e| PodError::io(dir, e))?;
    }
    for s in &dataset.samples {
        write_image(&images_dir.join(format!("{}.png", s.name)), &s.image)?;
        write_labels(&labels_dir.join(format!("{}.txt", s.name)), &s.labels)?;
    }
    Ok(())
}
