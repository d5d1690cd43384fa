//! Run configuration, read from TOML and echoed into every output directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scale_factor: usize,
    pub lr_size: usize,
    pub hr_size: usize,
    pub seed: u64,

    pub blur_sigma: f64,
    pub noise_sigma: f64,

    pub quave_steps: usize,
    pub quave_lr: f64,
    pub quave_batch: usize,

    pub vae_steps: usize,
    pub vae_lr: f64,
    pub vae_batch: usize,
    /// Side of the random HR crops the autoencoder is trained on.
    pub vae_crop: usize,
    pub vae_widths: [usize; 2],

    /// Diffusion optimisation steps.
    pub total_steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub unet_channels: [usize; 3],

    pub cfw_steps: usize,
    pub cfw_lr: f64,
    pub cfw_batch: usize,
    pub cfw_crop: usize,
    /// DDIM steps used to draw the latents CFW is fitted on.
    pub cfw_sample_steps: usize,
    pub cfw_w: f64,

    pub sample_steps: usize,
    pub eta: f64,
    /// Bound on the implied clean latent at each sampler step; 0 disables it.
    pub x0_clip: f64,

    /// HR image folder; a synthetic corpus is generated when unset.
    pub data_dir: Option<PathBuf>,
    pub synthetic_count: usize,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scale_factor: 4,
            lr_size: 32,
            hr_size: 128,
            seed: 7,
            blur_sigma: 1.2,
            noise_sigma: 0.01,
            quave_steps: 200,
            quave_lr: 1e-3,
            quave_batch: 4,
            vae_steps: 3000,
            vae_lr: 2e-3,
            vae_batch: 4,
            vae_crop: 32,
            vae_widths: [16, 32],
            total_steps: 1000,
            lr: 5e-5,
            batch_size: 6,
            weight_decay: 0.01,
            timesteps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            unet_channels: [32, 32, 64],
            cfw_steps: 6000,
            cfw_lr: 1e-3,
            cfw_batch: 4,
            cfw_crop: 32,
            cfw_sample_steps: 20,
            cfw_w: 1.0,
            sample_steps: 200,
            eta: 1.0,
            x0_clip: 3.0,
            data_dir: None,
            synthetic_count: 36,
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    /// Settings that train the desk-scale pipeline in minutes on one core:
    /// a larger step size and smaller batch than the default optimiser.
    pub fn desk() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 4,
            out_dir: PathBuf::from("runs/desk"),
            ..Self::default()
        }
    }

    /// 128 → 512 with the long fine-tuning schedule.
    pub fn full() -> Self {
        Self {
            lr_size: 128,
            hr_size: 512,
            total_steps: 14_000,
            out_dir: PathBuf::from("runs/full"),
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    /// Writes `config.toml` into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.toml"), self.to_toml())?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale_factor == 0 || self.lr_size == 0 {
            bail!("scale_factor and lr_size must be positive");
        }
        if self.hr_size != self.lr_size * self.scale_factor {
            bail!(
                "hr_size {} must equal lr_size {} x scale_factor {}",
                self.hr_size,
                self.lr_size,
                self.scale_factor
            );
        }
        if self.hr_size % 16 != 0 {
            bail!("hr_size must be a multiple of 16 (latent /4, then two U-Net halvings)");
        }
        if self.lr_size < 8 || self.lr_size % 8 != 0 {
            bail!("lr_size must be a multiple of 8 and at least 8");
        }
        for (name, crop) in [("vae_crop", self.vae_crop), ("cfw_crop", self.cfw_crop)] {
            if crop == 0 || crop % 4 != 0 || crop > self.hr_size {
                bail!("{name} must be a positive multiple of 4 no larger than hr_size");
            }
        }
        for (name, v) in [
            ("quave_batch", self.quave_batch),
            ("vae_batch", self.vae_batch),
            ("batch_size", self.batch_size),
            ("cfw_batch", self.cfw_batch),
            ("timesteps", self.timesteps),
            ("synthetic_count", self.synthetic_count),
        ] {
            if v == 0 {
                bail!("{name} must be positive");
            }
        }
        if self.sample_steps == 0 || self.sample_steps > self.timesteps {
            bail!("sample_steps must lie in [1, timesteps]");
        }
        if self.cfw_sample_steps == 0 || self.cfw_sample_steps > self.timesteps {
            bail!("cfw_sample_steps must lie in [1, timesteps]");
        }
        if !(0.0..=1.0).contains(&self.cfw_w) {
            bail!("cfw_w must lie in [0, 1]");
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            bail!("eta must be finite and nonnegative");
        }
        if !(self.x0_clip >= 0.0) {
            bail!("x0_clip must be nonnegative (0 disables clipping)");
        }
        if !(self.blur_sigma > 0.0) || !(self.noise_sigma >= 0.0) {
            bail!("blur_sigma must be positive and noise_sigma nonnegative");
        }
        for (name, lr) in [
            ("quave_lr", self.quave_lr),
            ("vae_lr", self.vae_lr),
            ("lr", self.lr),
            ("cfw_lr", self.cfw_lr),
        ] {
            if !(lr >= 0.0 && lr.is_finite()) {
                bail!("{name} must be finite and nonnegative");
            }
        }
        if let Some(dir) = &self.data_dir {
            if !dir.is_dir() {
                bail!("data_dir {} is not a directory", dir.display());
            }
        }
        Ok(())
    }
}
