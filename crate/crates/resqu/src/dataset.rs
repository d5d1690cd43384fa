//! Image folders: decoding, normalisation and the train/validation split.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use resqu_core::degradation::bicubic_resize;
use resqu_core::numerics::fnv64;
use resqu_core::ImageGrid;

const EXTENSIONS: [&str; 2] = ["png", "ppm"];

#[derive(Debug, Clone)]
pub struct Dataset {
    /// `(file name, image)` in lexicographic file-name order.
    pub items: Vec<(String, ImageGrid)>,
    /// Files that failed to decode in non-strict mode, with the reason.
    pub skipped: Vec<(String, String)>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.items.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn images(&self) -> Vec<ImageGrid> {
        self.items.iter().map(|(_, x)| x.clone()).collect()
    }
}

/// Decodes an 8- or 16-bit PNG/PPM into `[0, 1]` RGB.
pub fn load_image(path: &Path) -> Result<ImageGrid> {
    let img = image::open(path).with_context(|| format!("cannot decode {}", path.display()))?;
    let rgb = img.to_rgb32f();
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(|v| v as f64).collect();
    Ok(ImageGrid::from_vec(h as usize, w as usize, 3, data)?)
}

/// Writes an RGB (or single-channel) grid as 8-bit PNG, clamping to `[0, 1]`.
pub fn save_png(path: &Path, img: &ImageGrid) -> Result<()> {
    let (h, w, c) = img.dims();
    let to8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    match c {
        3 => {
            let buf = image::RgbImage::from_raw(w as u32, h as u32, img.data().iter().map(|&v| to8(v)).collect())
                .context("image buffer size")?;
            buf.save(path)
        }
        1 => {
            let buf = image::GrayImage::from_raw(w as u32, h as u32, img.data().iter().map(|&v| to8(v)).collect())
                .context("image buffer size")?;
            buf.save(path)
        }
        _ => bail!("cannot write a {c}-channel image"),
    }
    .with_context(|| format!("cannot write {}", path.display()))
}

/// Center crop to a square, then bicubic resize to `size × size`.
pub fn square_to(img: &ImageGrid, size: usize) -> Result<ImageGrid> {
    let (h, w, _) = img.dims();
    let s = h.min(w);
    let sq = img.crop((h - s) / 2, (w - s) / 2, s, s)?;
    if s == size {
        return Ok(sq);
    }
    Ok(bicubic_resize(&sq, size, size)?)
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot read directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

/// Loads every PNG/PPM in `dir` (lexicographic order), squared and resized
/// to `size`. With `strict`, the first undecodable file is an error;
/// otherwise it is recorded in `skipped`.
pub fn ingest_dataset(dir: &Path, size: Option<usize>, strict: bool) -> Result<Dataset> {
    let files = image_files(dir)?;
    let mut ds = Dataset {
        items: Vec::new(),
        skipped: Vec::new(),
    };
    for path in files {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let img = load_image(&path).and_then(|x| match size {
            Some(s) => square_to(&x, s),
            None => Ok(x),
        });
        match img {
            Ok(x) => ds.items.push((name, x)),
            Err(e) if strict => return Err(e.context(format!("corrupt image file {name}"))),
            Err(e) => ds.skipped.push((name, format!("{e:#}"))),
        }
    }
    if ds.items.is_empty() {
        bail!("no decodable PNG/PPM images in {}", dir.display());
    }
    Ok(ds)
}

/// Deterministic 90/10 split by FNV-1a hash of the file name. Both sides
/// are nonempty when there are at least two names.
pub fn split_names<'a>(names: &[&'a str]) -> (Vec<&'a str>, Vec<&'a str>) {
    let hash = |n: &str| fnv64(n.as_bytes());
    let (mut train, mut val): (Vec<&str>, Vec<&str>) = names.iter().partition(|n| hash(n) % 10 != 0);
    if val.is_empty() && train.len() > 1 {
        let i = (0..train.len()).min_by_key(|&i| hash(train[i])).expect("nonempty");
        val.push(train.remove(i));
    }
    if train.is_empty() && val.len() > 1 {
        let i = (0..val.len()).max_by_key(|&i| hash(val[i])).expect("nonempty");
        train.push(val.remove(i));
    }
    (train, val)
}

/// Splits a dataset into `(train, validation)` items.
pub fn split_dataset(ds: &Dataset) -> (Vec<(String, ImageGrid)>, Vec<(String, ImageGrid)>) {
    let names = ds.names();
    let (_, val) = split_names(&names);
    ds.items.iter().cloned().partition(|(n, _)| !val.contains(&n.as_str()))
}
