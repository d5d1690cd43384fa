//! Staged training, checkpoint plumbing and the super-resolution workflow.
//!
//! Stages run in a fixed order: wavelet embedder, autoencoder, diffusion
//! adapter with its conditioning encoder, then the CFW branch. Every stage
//! freezes what it trained and writes one checkpoint.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resqu_core::conditioning::{conditioning_strength_probe, CondEncoder};
use resqu_core::degradation::{bicubic_resize, degrade, DegradationSpec};
use resqu_core::diffusion::{
    ddim_sample, lr_latent, make_schedule, prepare_example, train_step, ClampedX0, ConditionedDenoiser,
    DenoiserParts,
    DiffusionExample, NoiseSchedule,
};
use resqu_core::metrics::MetricReport;
use resqu_core::networks::{
    cfw_train_step, vae_decode, vae_features, vae_pretrain_step, Autoencoder, AutoencoderConfig, CfwExample,
    CfwModule, UNet, UNetConfig, LATENT_CHANNELS, LATENT_FACTOR,
};
use resqu_core::numerics::{fnv64, AdamW, Fnv64};
use resqu_core::quave::{quave_embed, quave_pretrain_step, QuaveConfig, QuaveModel};
use resqu_core::{ImageGrid, ParamStore};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Quave,
    Vae,
    Diffusion,
    Cfw,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Quave, Stage::Vae, Stage::Diffusion, Stage::Cfw];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Quave => "quave",
            Stage::Vae => "vae",
            Stage::Diffusion => "diffusion",
            Stage::Cfw => "cfw",
        }
    }

    pub fn checkpoint_path(self, out_dir: &Path) -> PathBuf {
        out_dir.join("checkpoints").join(format!("{}.ckpt", self.name()))
    }

    pub fn loss_path(self, out_dir: &Path) -> PathBuf {
        out_dir.join(format!("loss_{}.csv", self.name()))
    }
}

/// A degraded training or evaluation pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub name: String,
    pub hr: ImageGrid,
    pub lr: ImageGrid,
}

/// Mixes a run seed with a label into an independent stream seed.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Fnv64::new();
    h.write(&seed.to_le_bytes());
    h.write(label.as_bytes());
    h.finish()
}

/// Degrades every HR image with a per-name noise seed.
pub fn make_pairs(cfg: &RunConfig, items: &[(String, ImageGrid)]) -> Result<Vec<Pair>> {
    items
        .iter()
        .map(|(name, hr)| {
            ensure!(
                hr.height() == cfg.hr_size && hr.width() == cfg.hr_size,
                "{name}: expected {0}x{0}, got {1}x{2}",
                cfg.hr_size,
                hr.height(),
                hr.width()
            );
            let spec = DegradationSpec::gaussian(
                cfg.blur_sigma,
                cfg.noise_sigma,
                cfg.scale_factor,
                derive_seed(cfg.seed, &format!("degrade/{name}")),
            )?;
            Ok(Pair {
                name: name.clone(),
                hr: hr.clone(),
                lr: degrade(hr, &spec)?,
            })
        })
        .collect()
}

/// Every network of the pipeline with its parameters.
#[derive(Debug, Clone)]
pub struct Models {
    pub quave: QuaveModel,
    pub quave_store: ParamStore,
    pub ae: Autoencoder,
    pub ae_store: ParamStore,
    pub unet: UNet,
    pub unet_store: ParamStore,
    pub cond: CondEncoder,
    pub cond_store: ParamStore,
    pub cfw: CfwModule,
    pub cfw_store: ParamStore,
    pub schedule: NoiseSchedule,
    /// Multiplier taking autoencoder latents to unit mean square.
    pub latent_scale: f64,
}

impl Models {
    /// Builds freshly initialised networks; the layout depends only on `cfg`.
    pub fn init(cfg: &RunConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "init"));
        let mut quave_store = ParamStore::new();
        let quave = QuaveModel::new(
            &mut quave_store,
            QuaveConfig {
                patch: cfg.lr_size.min(32),
                ..QuaveConfig::default()
            },
            &mut rng,
        )?;
        let mut ae_store = ParamStore::new();
        let ae_config = AutoencoderConfig { widths: cfg.vae_widths };
        let ae = Autoencoder::new(&mut ae_store, ae_config, &mut rng)?;
        let mut unet_store = ParamStore::new();
        let unet = UNet::new(
            &mut unet_store,
            UNetConfig {
                channels: cfg.unet_channels,
                ..UNetConfig::default()
            },
            &mut rng,
        )?;
        UNet::freeze_backbone(&mut unet_store);
        let mut cond_store = ParamStore::new();
        let cond = CondEncoder::new(&mut cond_store, &unet.config, &mut rng)?;
        let mut cfw_store = ParamStore::new();
        let cfw = CfwModule::new(&mut cfw_store, &ae_config, &mut rng)?;
        // Checkpoints hold f32; start from representable values so a
        // reload is bitwise identical to the in-memory state.
        for s in [&mut quave_store, &mut ae_store, &mut unet_store, &mut cond_store, &mut cfw_store] {
            s.round_to_f32();
        }
        Ok(Self {
            quave,
            quave_store,
            ae,
            ae_store,
            unet,
            unet_store,
            cond,
            cond_store,
            cfw,
            cfw_store,
            schedule: make_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end)?,
            latent_scale: 1.0,
        })
    }

    fn parts(&self) -> DenoiserParts<'_> {
        DenoiserParts {
            unet: &self.unet,
            unet_store: &self.unet_store,
            cond: &self.cond,
            cond_store: &self.cond_store,
        }
    }

    pub fn checkpoint(&self, stage: Stage, cfg: &RunConfig) -> Checkpoint {
        let mut ck = Checkpoint::new(stage.name(), &cfg.to_toml());
        match stage {
            Stage::Quave => ck.add_store("quave", &self.quave_store),
            Stage::Vae => ck.add_store("vae", &self.ae_store),
            Stage::Diffusion => {
                ck.add_store("unet", &self.unet_store);
                ck.add_store("cond", &self.cond_store);
                ck.add_scalar("latent_scale", self.latent_scale);
            }
            Stage::Cfw => ck.add_store("cfw", &self.cfw_store),
        }
        ck
    }

    pub fn restore(&mut self, stage: Stage, ck: &Checkpoint) -> Result<()> {
        ck.expect_kind(stage.name())?;
        match stage {
            Stage::Quave => ck.restore_store("quave", &mut self.quave_store)?,
            Stage::Vae => ck.restore_store("vae", &mut self.ae_store)?,
            Stage::Diffusion => {
                let scale = ck.scalar("latent_scale")?;
                ensure!(scale.is_finite() && scale > 0.0, "invalid latent scale {scale}");
                ck.restore_store("unet", &mut self.unet_store)?;
                ck.restore_store("cond", &mut self.cond_store)?;
                self.latent_scale = scale;
            }
            Stage::Cfw => ck.restore_store("cfw", &mut self.cfw_store)?,
        }
        Ok(())
    }

    pub fn save_stage(&self, stage: Stage, cfg: &RunConfig) -> Result<PathBuf> {
        let path = stage.checkpoint_path(&cfg.out_dir);
        self.checkpoint(stage, cfg).save(&path)?;
        Ok(path)
    }

    /// Loads one stage from `cfg.out_dir`, naming the stage when missing.
    pub fn load_stage(&mut self, stage: Stage, cfg: &RunConfig) -> Result<()> {
        let path = stage.checkpoint_path(&cfg.out_dir);
        if !path.exists() {
            bail!(
                "missing {} checkpoint at {}; run the {} stage first",
                stage.name(),
                path.display(),
                stage.name()
            );
        }
        let ck = Checkpoint::load(&path)?;
        self.restore(stage, &ck)
            .with_context(|| format!("restoring {} from {}", stage.name(), path.display()))
    }

    /// Fresh models with every stage restored from `cfg.out_dir`.
    pub fn load_all(cfg: &RunConfig) -> Result<Self> {
        let mut m = Self::init(cfg)?;
        for stage in Stage::ALL {
            m.load_stage(stage, cfg)?;
        }
        Ok(m)
    }

    /// Hashes of the stores that a given stage must leave untouched.
    pub fn frozen_hashes(&self) -> FrozenHashes {
        FrozenHashes {
            quave: self.quave_store.fingerprint(),
            vae: self.ae_store.fingerprint(),
            backbone: frozen_fingerprint(&self.unet_store),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrozenHashes {
    pub quave: u64,
    pub vae: u64,
    /// Frozen entries of the denoiser store only.
    pub backbone: u64,
}

fn frozen_fingerprint(store: &ParamStore) -> u64 {
    let mut h = Fnv64::new();
    for e in store.entries().iter().filter(|e| e.frozen) {
        h.write(e.name.as_bytes());
        for v in &e.value {
            h.write(&v.to_le_bytes());
        }
    }
    h.finish()
}

/// Per-stage training losses, one value per optimisation step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StageLog {
    pub losses: Vec<f64>,
    pub wall_time_s: f64,
}

impl StageLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["step", "loss"])?;
        for (i, l) in self.losses.iter().enumerate() {
            w.write_record([i.to_string(), format!("{l:.9e}")])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Trailing mean over `window` steps ending at `end` (exclusive).
    pub fn smoothed(&self, end: usize, window: usize) -> f64 {
        let end = end.min(self.losses.len());
        let start = end.saturating_sub(window.max(1));
        let s = &self.losses[start..end];
        s.iter().sum::<f64>() / s.len().max(1) as f64
    }
}

fn random_crop(x: &ImageGrid, size: usize, rng: &mut impl Rng, align: usize) -> Result<ImageGrid> {
    let top = rng.random_range(0..=(x.height() - size) / align) * align;
    let left = rng.random_range(0..=(x.width() - size) / align) * align;
    Ok(x.crop(top, left, size, size)?)
}

pub fn pretrain_quave(cfg: &RunConfig, m: &mut Models, train: &[Pair]) -> Result<StageLog> {
    ensure!(!train.is_empty(), "no training pairs");
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "quave"));
    let opt = AdamW {
        weight_decay: cfg.weight_decay,
        ..AdamW::with_lr(cfg.quave_lr)
    };
    let patch = m.quave.config.patch;
    let mut log = StageLog::default();
    for _ in 0..cfg.quave_steps {
        let batch = (0..cfg.quave_batch)
            .map(|_| random_crop(&train[rng.random_range(0..train.len())].lr, patch, &mut rng, 1))
            .collect::<Result<Vec<_>>>()?;
        log.losses.push(quave_pretrain_step(&m.quave, &mut m.quave_store, &batch, &opt)?);
    }
    m.quave_store.freeze_all();
    m.quave_store.round_to_f32();
    log.wall_time_s = t0.elapsed().as_secs_f64();
    Ok(log)
}

/// Half-cosine decay from `base` to zero over `total` steps.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    0.5 * base * (1.0 + (std::f64::consts::PI * step as f64 / total.max(1) as f64).cos())
}

pub fn pretrain_vae(cfg: &RunConfig, m: &mut Models, train: &[Pair]) -> Result<StageLog> {
    ensure!(!train.is_empty(), "no training pairs");
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "vae"));
    let mut opt = AdamW {
        weight_decay: cfg.weight_decay,
        clip_norm: Some(1.0),
        ..AdamW::with_lr(cfg.vae_lr)
    };
    let mut log = StageLog::default();
    for step in 0..cfg.vae_steps {
        // Without the decay the plain reconstruction objective eventually
        // blows up the latent scale.
        opt.lr = cosine_lr(cfg.vae_lr, step, cfg.vae_steps);
        let batch = (0..cfg.vae_batch)
            .map(|_| random_crop(&train[rng.random_range(0..train.len())].hr, cfg.vae_crop, &mut rng, 1))
            .collect::<Result<Vec<_>>>()?;
        log.losses.push(vae_pretrain_step(&m.ae, &mut m.ae_store, &batch, &opt)?);
    }
    m.ae_store.freeze_all();
    m.ae_store.round_to_f32();
    log.wall_time_s = t0.elapsed().as_secs_f64();
    Ok(log)
}

/// Encodes the pairs with the frozen embedder and autoencoder, sets the
/// latent scale from the training latents and applies it.
pub fn diffusion_examples(m: &mut Models, train: &[Pair], fit_scale: bool) -> Result<Vec<DiffusionExample>> {
    let mut examples = train
        .iter()
        .map(|p| Ok(prepare_example(&m.ae, &m.ae_store, &m.quave, &m.quave_store, &p.hr, &p.lr)?))
        .collect::<Result<Vec<_>>>()?;
    if fit_scale {
        let (mut ss, mut n) = (0.0, 0usize);
        for e in &examples {
            ss += e.z0.sum_squares();
            n += e.z0.data().len();
        }
        let ms = ss / n.max(1) as f64;
        ensure!(ms > 0.0 && ms.is_finite(), "degenerate latents (mean square {ms})");
        m.latent_scale = (1.0 / ms.sqrt()) as f32 as f64;
    }
    let s = m.latent_scale;
    for e in &mut examples {
        e.z0 = e.z0.map(|v| v * s);
        e.z_lr = e.z_lr.map(|v| v * s);
    }
    Ok(examples)
}

/// Result of the diffusion stage: losses plus the frozen-store hashes
/// taken before and after.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionReport {
    pub log: StageLog,
    pub before: FrozenHashes,
    pub after: FrozenHashes,
}

pub fn train_diffusion(cfg: &RunConfig, m: &mut Models, train: &[Pair]) -> Result<DiffusionReport> {
    ensure!(!train.is_empty(), "no training pairs");
    let t0 = Instant::now();
    let before = m.frozen_hashes();
    let examples = diffusion_examples(m, train, true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "diffusion"));
    let opt = AdamW {
        weight_decay: cfg.weight_decay,
        ..AdamW::with_lr(cfg.lr)
    };
    let mut log = StageLog::default();
    for _ in 0..cfg.total_steps {
        let batch: Vec<DiffusionExample> = (0..cfg.batch_size)
            .map(|_| examples[rng.random_range(0..examples.len())].clone())
            .collect();
        let loss = train_step(
            &m.unet,
            &mut m.unet_store,
            &m.cond,
            &mut m.cond_store,
            &batch,
            &m.schedule,
            &opt,
            &mut rng,
        )?;
        log.losses.push(loss);
    }
    m.unet_store.round_to_f32();
    m.cond_store.round_to_f32();
    let after = m.frozen_hashes();
    ensure!(before == after, "frozen components changed during diffusion training");
    log.wall_time_s = t0.elapsed().as_secs_f64();
    Ok(DiffusionReport { log, before, after })
}

/// Samples a latent for `lr` and returns it in autoencoder units together
/// with the upsampled input it was conditioned on.
pub fn sample_latent(cfg: &RunConfig, m: &Models, lr: &ImageGrid, steps: usize, seed: u64) -> Result<(ImageGrid, ImageGrid)> {
    let (h, w) = (lr.height() * cfg.scale_factor, lr.width() * cfg.scale_factor);
    ensure!(
        h % (LATENT_FACTOR * 4) == 0 && w % (LATENT_FACTOR * 4) == 0,
        "output {h}x{w} must be a multiple of {}",
        LATENT_FACTOR * 4
    );
    let x_up = bicubic_resize(lr, h, w)?;
    let s = m.latent_scale;
    let den = ConditionedDenoiser {
        parts: m.parts(),
        z_lr: lr_latent(&m.ae, &m.ae_store, lr, h, w)?.map(|v| v * s),
        quave_emb: quave_embed(&m.quave, &m.quave_store, lr)?,
        timesteps: m.schedule.timesteps(),
    };
    let dims = (h / LATENT_FACTOR, w / LATENT_FACTOR, LATENT_CHANNELS);
    let z = if cfg.x0_clip > 0.0 {
        let den = ClampedX0 {
            inner: den,
            bound: cfg.x0_clip,
            schedule: &m.schedule,
        };
        ddim_sample(&den, dims, &m.schedule, steps, cfg.eta, seed)?
    } else {
        ddim_sample(&den, dims, &m.schedule, steps, cfg.eta, seed)?
    };
    Ok((z.map(|v| v / s), x_up))
}

fn sample_seed(cfg: &RunConfig, name: &str) -> u64 {
    derive_seed(cfg.seed, &format!("sample/{name}"))
}

pub fn train_cfw(cfg: &RunConfig, m: &mut Models, train: &[Pair]) -> Result<StageLog> {
    ensure!(!train.is_empty(), "no training pairs");
    let t0 = Instant::now();
    let before = m.frozen_hashes();
    let mut full = Vec::with_capacity(train.len());
    for p in train {
        let (z, x_up) = sample_latent(cfg, m, &p.lr, cfg.cfw_sample_steps, sample_seed(cfg, &p.name))?;
        let feats = vae_features(&m.ae, &m.ae_store, &x_up)?;
        full.push((z, feats, &p.hr));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "cfw"));
    let mut opt = AdamW {
        weight_decay: cfg.weight_decay,
        ..AdamW::with_lr(cfg.cfw_lr)
    };
    let w = if cfg.cfw_w > 0.0 { cfg.cfw_w } else { 1.0 };
    let mut log = StageLog::default();
    for step in 0..cfg.cfw_steps {
        opt.lr = cosine_lr(cfg.cfw_lr, step, cfg.cfw_steps);
        let batch = (0..cfg.cfw_batch)
            .map(|_| {
                let (z, feats, hr) = &full[rng.random_range(0..full.len())];
                let a = LATENT_FACTOR;
                let top = rng.random_range(0..=(hr.height() - cfg.cfw_crop) / a) * a;
                let left = rng.random_range(0..=(hr.width() - cfg.cfw_crop) / a) * a;
                Ok(CfwExample::window(z, feats, hr, top, left, cfg.cfw_crop)?)
            })
            .collect::<Result<Vec<_>>>()?;
        log.losses.push(cfw_train_step(&m.ae, &m.ae_store, &m.cfw, &mut m.cfw_store, &batch, w, &opt)?);
    }
    m.cfw_store.freeze_all();
    m.cfw_store.round_to_f32();
    ensure!(before == m.frozen_hashes(), "frozen components changed during CFW training");
    log.wall_time_s = t0.elapsed().as_secs_f64();
    Ok(log)
}

/// Runs one stage, writes its checkpoint and loss CSV, returns the log.
pub fn run_stage(cfg: &RunConfig, m: &mut Models, stage: Stage, train: &[Pair]) -> Result<StageLog> {
    let log = match stage {
        Stage::Quave => pretrain_quave(cfg, m, train)?,
        Stage::Vae => pretrain_vae(cfg, m, train)?,
        Stage::Diffusion => train_diffusion(cfg, m, train)?.log,
        Stage::Cfw => train_cfw(cfg, m, train)?,
    };
    m.save_stage(stage, cfg)?;
    log.write_csv(&stage.loss_path(&cfg.out_dir))?;
    Ok(log)
}

/// Diffusion and CFW training. Earlier stages are loaded from their
/// checkpoints, or trained first when `pretrain_all` is set.
pub fn run_training(cfg: &RunConfig, train: &[Pair], pretrain_all: bool) -> Result<(Models, Vec<(Stage, StageLog)>)> {
    cfg.validate()?;
    cfg.echo(&cfg.out_dir)?;
    let mut m = Models::init(cfg)?;
    let mut logs = Vec::new();
    for stage in [Stage::Quave, Stage::Vae] {
        if pretrain_all {
            logs.push((stage, run_stage(cfg, &mut m, stage, train)?));
        } else {
            m.load_stage(stage, cfg)?;
        }
    }
    for stage in [Stage::Diffusion, Stage::Cfw] {
        logs.push((stage, run_stage(cfg, &mut m, stage, train)?));
    }
    Ok((m, logs))
}

/// Full ×`scale_factor` reconstruction of one low-resolution image.
pub fn run_sr(cfg: &RunConfig, m: &Models, lr: &ImageGrid, steps: usize, seed: u64) -> Result<ImageGrid> {
    let (z, x_up) = sample_latent(cfg, m, lr, steps, seed)?;
    if cfg.cfw_w > 0.0 {
        let feats = vae_features(&m.ae, &m.ae_store, &x_up)?;
        Ok(vae_decode(&m.ae, &m.ae_store, &z, Some(&feats), Some((&m.cfw, &m.cfw_store)), cfg.cfw_w)?)
    } else {
        Ok(vae_decode(&m.ae, &m.ae_store, &z, None, None, 0.0)?)
    }
}

/// Metrics of the pipeline and of bicubic upsampling on the same pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Evaluation {
    pub ours: MetricReport,
    pub bicubic: MetricReport,
}

impl Evaluation {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["image", "psnr_y", "ssim_y", "bicubic_psnr_y", "bicubic_ssim_y"])?;
        for (a, b) in self.ours.rows.iter().zip(&self.bicubic.rows) {
            w.write_record([
                a.name.clone(),
                format!("{:.6}", a.psnr_y),
                format!("{:.6}", a.ssim_y),
                format!("{:.6}", b.psnr_y),
                format!("{:.6}", b.ssim_y),
            ])?;
        }
        w.write_record([
            "MEAN".to_string(),
            format!("{:.6}", self.ours.mean_psnr()),
            format!("{:.6}", self.ours.mean_ssim()),
            format!("{:.6}", self.bicubic.mean_psnr()),
            format!("{:.6}", self.bicubic.mean_ssim()),
        ])?;
        w.flush()?;
        Ok(())
    }
}

/// Super-resolves every pair with `steps` sampler steps. When `out_dir`
/// is given, each output is written as `<name>.png` there.
pub fn evaluate(cfg: &RunConfig, m: &Models, pairs: &[Pair], steps: usize, out_dir: Option<&Path>) -> Result<Evaluation> {
    ensure!(!pairs.is_empty(), "nothing to evaluate");
    let mut ev = Evaluation::default();
    for p in pairs {
        let sr = run_sr(cfg, m, &p.lr, steps, sample_seed(cfg, &p.name))?;
        if let Some(dir) = out_dir {
            let stem = Path::new(&p.name).file_stem().and_then(|s| s.to_str()).unwrap_or(&p.name);
            crate::dataset::save_png(&dir.join(format!("{stem}.png")), &sr)?;
        }
        ev.ours.push(p.name.clone(), &p.hr, &sr)?;
        let bic = bicubic_resize(&p.lr, p.hr.height(), p.hr.width())?;
        ev.bicubic.push(p.name.clone(), &p.hr, &bic)?;
    }
    Ok(ev)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub steps: usize,
    pub psnr_y: f64,
    pub ssim_y: f64,
    pub wall_time_s: f64,
}

/// Evaluates the pairs once per sampler step count.
pub fn run_ablation_steps(cfg: &RunConfig, m: &Models, pairs: &[Pair], step_list: &[usize]) -> Result<Vec<AblationRow>> {
    ensure!(!step_list.is_empty(), "empty step list");
    step_list
        .iter()
        .map(|&steps| {
            let t0 = Instant::now();
            let ev = evaluate(cfg, m, pairs, steps, None)?;
            Ok(AblationRow {
                steps,
                psnr_y: ev.ours.mean_psnr(),
                ssim_y: ev.ours.mean_ssim(),
                wall_time_s: t0.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["steps", "psnr_y", "ssim_y", "wall_time_s"])?;
    for r in rows {
        w.write_record([
            r.steps.to_string(),
            format!("{:.6}", r.psnr_y),
            format!("{:.6}", r.ssim_y),
            format!("{:.6}", r.wall_time_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Conditioning strength per timestep, averaged over the pairs.
pub fn probe_conditioning(cfg: &RunConfig, m: &Models, pairs: &[Pair], t_list: &[usize]) -> Result<Vec<(usize, f64)>> {
    ensure!(!pairs.is_empty() && !t_list.is_empty(), "probe needs pairs and timesteps");
    let mut acc = vec![0.0; t_list.len()];
    for p in pairs {
        let s = m.latent_scale;
        let z_lr = lr_latent(&m.ae, &m.ae_store, &p.lr, cfg.hr_size, cfg.hr_size)?.map(|v| v * s);
        let emb = quave_embed(&m.quave, &m.quave_store, &p.lr)?;
        let v = conditioning_strength_probe(&m.cond, &m.cond_store, &z_lr, &emb, &m.schedule, t_list)?;
        acc.iter_mut().zip(v).for_each(|(a, b)| *a += b / pairs.len() as f64);
    }
    Ok(t_list.iter().copied().zip(acc).collect())
}

/// Sanity hash of a loss log, used to compare reruns.
pub fn log_digest(log: &StageLog) -> u64 {
    let bytes: Vec<u8> = log.losses.iter().flat_map(|l| l.to_le_bytes()).collect();
    fnv64(&bytes)
}
