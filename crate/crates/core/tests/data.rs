use pod_core::data::{
    export_dataset, filter_persons, load_dataset, synth_dataset, synth_scene, BBox, Dataset, Image,
    Sample, SynthConfig, HUMAN, PATCH,
};
use pod_core::stream;

fn sample(name: &str, size: usize, labels: Vec<BBox>) -> Sample {
    Sample {
        name: name.into(),
        image: Image::filled(size, size, 0.25),
        labels,
    }
}

#[test]
fn export_then_load_keeps_boxes() {
    let dir = tempfile::tempdir().unwrap();
    let synth = SynthConfig {
        image_size: 64,
        seed: 11,
        ..SynthConfig::default()
    };
    let data = synth_dataset(&synth, 25, "train").unwrap();
    export_dataset(&data, dir.path()).unwrap();
    let back = load_dataset(dir.path(), "train").unwrap();
    assert_eq!(back.len(), data.len());
    for (a, b) in data.samples.iter().zip(&back.samples) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.labels.len(), b.labels.len());
        for (x, y) in a.labels.iter().zip(&b.labels) {
            assert_eq!(x.class_id, y.class_id);
            for (u, v) in [(x.cx, y.cx), (x.cy, y.cy), (x.bw, y.bw), (x.bh, y.bh)] {
                assert!((u - v).abs() < 1e-6);
            }
        }
        // 8-bit storage: pixels agree to quantization
        for (p, q) in a.image.pixels().iter().zip(b.image.pixels()) {
            assert!((p - q).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}

#[test]
fn synth_boxes_stay_inside_the_image() {
    let config = SynthConfig {
        image_size: 64,
        persons_per_image: (1, 3),
        ..SynthConfig::default()
    };
    let mut rng = stream!(5, "containment");
    for _ in 0..1000 {
        let scene = synth_scene(&config, &mut rng).unwrap();
        assert!(!scene.boxes.is_empty());
        for b in &scene.boxes {
            assert_eq!(b.class_id, HUMAN);
            assert!(b.is_valid(), "{b:?}");
        }
        assert!(scene.image.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn synth_is_deterministic_per_seed() {
    let config = SynthConfig {
        image_size: 32,
        seed: 3,
        ..SynthConfig::default()
    };
    let a = synth_dataset(&config, 10, "x").unwrap();
    let b = synth_dataset(&config, 10, "x").unwrap();
    let c = synth_dataset(&SynthConfig { seed: 4, ..config }, 10, "x").unwrap();
    assert_eq!(a.samples, b.samples);
    assert_ne!(a.samples, c.samples);
}

#[test]
fn filter_keeps_boxes_above_threshold() {
    // 400 px image: heights 100, 121 and 300 pixels, narrow boxes
    let mk = |h: f64| BBox::new(HUMAN, 0.5, 0.5, 20.0 / 400.0, h / 400.0);
    let mut data = Dataset::new("train");
    data.samples.push(sample("a", 400, vec![mk(100.0)]));
    data.samples
        .push(sample("b", 400, vec![mk(121.0), mk(100.0)]));
    data.samples.push(sample("c", 400, vec![mk(300.0)]));
    data.samples
        .push(sample("d", 400, vec![BBox::new(PATCH, 0.5, 0.5, 0.5, 0.5)]));

    let (kept, stats) = filter_persons(&data, 120.0);
    assert_eq!(stats.images, 2);
    assert_eq!(stats.labels, 2);
    let names: Vec<&str> = kept.samples.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ["b", "c"]);
    assert_eq!(kept.samples[0].labels.len(), 1);

    let (again, stats2) = filter_persons(&kept, 120.0);
    assert_eq!(again.samples, kept.samples);
    assert_eq!(stats2, stats);
}

#[test]
fn empty_split_directory_loads_empty() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("test/images")).unwrap();
    std::fs::create_dir_all(dir.path().join("test/labels")).unwrap();
    let data = load_dataset(dir.path(), "test").unwrap();
    assert!(data.is_empty());
    let (kept, stats) = filter_persons(&data, 120.0);
    assert!(kept.is_empty());
    assert_eq!((stats.images, stats.labels), (0, 0));
}

#[test]
fn missing_split_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_dataset(dir.path(), "nope").unwrap_err().to_string();
    assert!(err.contains("nope"), "{err}");
}
