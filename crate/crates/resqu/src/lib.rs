//! Training, evaluation and persistence around `resqu-core`.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod pipeline;

use anyhow::Result;
use resqu_core::synth::synth_image;
use resqu_core::ImageGrid;

use crate::config::RunConfig;
use crate::dataset::ingest_dataset;
use crate::pipeline::derive_seed;

/// The HR corpus named by `cfg`: the image folder when set, otherwise
/// `synthetic_count` generated scenes named `synth_000.png`, ...
pub fn load_corpus(cfg: &RunConfig, strict: bool) -> Result<Vec<(String, ImageGrid)>> {
    match &cfg.data_dir {
        Some(dir) => Ok(ingest_dataset(dir, Some(cfg.hr_size), strict)?.items),
        None => Ok((0..cfg.synthetic_count)
            .map(|i| {
                let name = format!("synth_{i:03}.png");
                let img = synth_image(cfg.hr_size, derive_seed(cfg.seed, &name));
                (name, img)
            })
            .collect()),
    }
}
