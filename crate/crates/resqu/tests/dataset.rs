use std::fs;

use resqu::dataset::{ingest_dataset, load_image, save_png, split_names};
use resqu_core::synth::synth_image;
use resqu_core::ImageGrid;

fn write_images(dir: &std::path::Path, names: &[&str]) {
    for (i, n) in names.iter().enumerate() {
        save_png(&dir.join(n), &synth_image(24, i as u64)).unwrap();
    }
}

#[test]
fn five_images_in_lexicographic_order() {
    let dir = tempfile::tempdir().unwrap();
    write_images(dir.path(), &["c.png", "a.png", "e.png", "b.png", "d.png"]);
    fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
    let ds = ingest_dataset(dir.path(), Some(16), true).unwrap();
    assert_eq!(ds.len(), 5);
    assert_eq!(ds.names(), ["a.png", "b.png", "c.png", "d.png", "e.png"]);
    for (_, x) in &ds.items {
        assert_eq!(x.dims(), (16, 16, 3));
        assert!(x.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
    let again = ingest_dataset(dir.path(), Some(16), true).unwrap();
    assert_eq!(again.names(), ds.names());
    assert_eq!(again.images(), ds.images());
}

#[test]
fn png_roundtrip_is_exact_on_8bit_values() {
    let dir = tempfile::tempdir().unwrap();
    let x = ImageGrid::from_fn(5, 7, 3, |y, x, c| ((y * 31 + x * 7 + c * 50) % 256) as f64 / 255.0);
    let p = dir.path().join("x.png");
    save_png(&p, &x).unwrap();
    let back = load_image(&p).unwrap();
    assert!(back.max_abs_diff(&x).unwrap() < 1e-6);
}

#[test]
fn strict_mode_names_the_corrupt_file() {
    let dir = tempfile::tempdir().unwrap();
    write_images(dir.path(), &["good.png"]);
    let bytes = fs::read(dir.path().join("good.png")).unwrap();
    fs::write(dir.path().join("broken.png"), &bytes[..bytes.len() / 3]).unwrap();

    let err = ingest_dataset(dir.path(), Some(16), true).unwrap_err();
    assert!(format!("{err:#}").contains("broken.png"), "{err:#}");

    let ds = ingest_dataset(dir.path(), Some(16), false).unwrap();
    assert_eq!(ds.names(), ["good.png"]);
    assert_eq!(ds.skipped.len(), 1);
    assert_eq!(ds.skipped[0].0, "broken.png");
}

#[test]
fn empty_directory_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(ingest_dataset(dir.path(), None, false).is_err());
    assert!(ingest_dataset(&dir.path().join("missing"), None, false).is_err());
}

#[test]
fn split_is_deterministic_disjoint_and_nonempty() {
    let names: Vec<String> = (0..50).map(|i| format!("img_{i:03}.png")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let (train, val) = split_names(&refs);
    assert_eq!(train.len() + val.len(), 50);
    assert!(!val.is_empty() && !train.is_empty());
    assert!(val.iter().all(|v| !train.contains(v)));
    assert_eq!(split_names(&refs), (train.clone(), val.clone()));
    let (t2, v2) = split_names(&refs[..2]);
    assert_eq!((t2.len(), v2.len()), (1, 1));
}
