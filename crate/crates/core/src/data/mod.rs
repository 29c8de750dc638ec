//! Images, boxes and datasets.

mod bbox;
mod filter;
mod image;
mod io;
mod synth;

pub use bbox::{BBox, PixelRect, Rect, HUMAN, PATCH};
pub use filter::{filter_persons, FilterStats};
pub use image::Image;
pub use io::{export_dataset, load_dataset, read_image, read_labels, write_image, write_labels};
pub use synth::{synth_dataset, synth_scene, Blob, SynthConfig, SynthScene};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// File stem used when the sample is written to disk.
    pub name: String,
    pub image: Image,
    pub labels: Vec<BBox>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub split_name: String,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(split_name: impl Into<String>) -> Self {
        Dataset {
            split_name: split_name.into(),
            samples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn label_count(&self, class_id: u8) -> usize {
        self.samples
            .iter()
            .flat_map(|s| s.labels.iter())
            .filter(|b| b.class_id == class_id)
            .count()
    }
}
